#pragma once

#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "memmlp/lbfgs.hpp"
#include "memmlp/model.hpp"

// Config file: TOML-style "[section]" headers and "key = value" lines, with
// ints, floats, booleans, quoted strings and [n, n, ...] lists. Every key
// must be consumed by RunConfig; unknown keys are rejected.

namespace memmlp {

class ConfigFile {
public:
    static ConfigFile parse_file(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw IoError("cannot open config: " + path);
        std::stringstream ss;
        ss << in.rdbuf();
        return parse_string(ss.str(), path);
    }

    static ConfigFile parse_string(const std::string& text, const std::string& origin = "<string>") {
        ConfigFile cfg;
        std::string section;
        std::istringstream in(text);
        std::string line;
        int lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            const std::size_t hash = line.find('#');
            if (hash != std::string::npos) line.erase(hash);
            line = trim(line);
            if (line.empty()) continue;
            if (line.front() == '[') {
                if (line.back() != ']')
                    throw DomainError(origin + ":" + std::to_string(lineno) + ": malformed section");
                section = trim(line.substr(1, line.size() - 2));
                continue;
            }
            const std::size_t eq = line.find('=');
            if (eq == std::string::npos)
                throw DomainError(origin + ":" + std::to_string(lineno) + ": expected key = value");
            const std::string key = trim(line.substr(0, eq));
            const std::string value = trim(line.substr(eq + 1));
            if (key.empty() || value.empty())
                throw DomainError(origin + ":" + std::to_string(lineno) + ": empty key or value");
            const std::string full = section.empty() ? key : section + "." + key;
            if (cfg.values_.count(full))
                throw DomainError(origin + ": duplicate key " + full);
            cfg.values_[full] = value;
        }
        return cfg;
    }

    bool has(const std::string& key) const { return values_.count(key) > 0; }

    template <typename Fn>
    void take(const std::string& key, Fn&& assign) {
        auto it = values_.find(key);
        if (it == values_.end()) return;
        assign(it->second);
        consumed_.insert(key);
    }

    void take_int(const std::string& key, int& out) {
        take(key, [&](const std::string& v) { out = static_cast<int>(parse_long(key, v)); });
    }
    void take_long(const std::string& key, long& out) {
        take(key, [&](const std::string& v) { out = parse_long(key, v); });
    }
    void take_u64(const std::string& key, std::uint64_t& out) {
        take(key, [&](const std::string& v) { out = static_cast<std::uint64_t>(parse_long(key, v)); });
    }
    void take_double(const std::string& key, double& out) {
        take(key, [&](const std::string& v) { out = parse_double(key, v); });
    }
    void take_bool(const std::string& key, bool& out) {
        take(key, [&](const std::string& v) {
            if (v == "true")
                out = true;
            else if (v == "false")
                out = false;
            else
                throw DomainError("config: " + key + " expects true/false");
        });
    }
    void take_string(const std::string& key, std::string& out) {
        take(key, [&](const std::string& v) {
            if (v.size() < 2 || v.front() != '"' || v.back() != '"')
                throw DomainError("config: " + key + " expects a quoted string");
            out = v.substr(1, v.size() - 2);
        });
    }
    void take_int_list(const std::string& key, std::vector<int>& out) {
        take(key, [&](const std::string& v) {
            out.clear();
            for (const std::string& item : split_list(key, v))
                out.push_back(static_cast<int>(parse_long(key, item)));
        });
    }

    // Throws if any key was never consumed.
    void finish() const {
        for (const auto& [key, value] : values_)
            if (!consumed_.count(key)) throw DomainError("config: unknown key " + key);
    }

private:
    std::map<std::string, std::string> values_;
    std::set<std::string> consumed_;

    static std::string trim(const std::string& s) {
        const auto a = s.find_first_not_of(" \t\r");
        if (a == std::string::npos) return "";
        const auto b = s.find_last_not_of(" \t\r");
        return s.substr(a, b - a + 1);
    }

    static long parse_long(const std::string& key, const std::string& v) {
        std::size_t used = 0;
        long out = 0;
        try {
            out = std::stol(v, &used);
        } catch (...) {
            throw DomainError("config: " + key + " expects an integer, got " + v);
        }
        if (used != v.size()) throw DomainError("config: " + key + " expects an integer, got " + v);
        return out;
    }

    static double parse_double(const std::string& key, const std::string& v) {
        std::size_t used = 0;
        double out = 0;
        try {
            out = std::stod(v, &used);
        } catch (...) {
            throw DomainError("config: " + key + " expects a number, got " + v);
        }
        if (used != v.size()) throw DomainError("config: " + key + " expects a number, got " + v);
        return out;
    }

    static std::vector<std::string> split_list(const std::string& key, const std::string& v) {
        if (v.size() < 2 || v.front() != '[' || v.back() != ']')
            throw DomainError("config: " + key + " expects [a, b, ...]");
        std::vector<std::string> out;
        std::string body = v.substr(1, v.size() - 2);
        std::istringstream ss(body);
        std::string item;
        while (std::getline(ss, item, ',')) {
            item = trim(item);
            if (!item.empty()) out.push_back(item);
        }
        return out;
    }
};

struct RunConfig {
    MemMLPConfig model;
    VqVaeConfig prior;
    TrainOptions train;
    VqVaeTrainOptions prior_train;
    int data_stride = 1;
    LbfgsConfig ik;

    static RunConfig from_file(const std::string& path) {
        ConfigFile f = ConfigFile::parse_file(path);
        return from_config(f);
    }

    static RunConfig from_config(ConfigFile& f) {
        RunConfig rc;
        f.take_int("model.t_window", rc.model.t_window);
        f.take_int("model.d", rc.model.d);
        f.take_int("model.depth", rc.model.depth);
        f.take_int("model.conv_kernel", rc.model.conv_kernel);
        f.take_int_list("model.memory_layers", rc.model.memory_layers);
        f.take_int("model.predictor_depth", rc.model.predictor_depth);
        f.take_bool("model.multi_head", rc.model.multi_head);
        f.take_int("model.latent", rc.model.latent);
        std::string blend;
        f.take_string("model.blend", blend);
        if (blend == "sampled")
            rc.model.infer_blend = BlendMode::sampled;
        else if (blend == "fixed" || blend.empty())
            rc.model.infer_blend = BlendMode::fixed;
        else
            throw DomainError("config: model.blend must be fixed or sampled");
        f.take_double("model.blend_value", rc.model.blend_value);
        std::string weighting;
        f.take_string("model.weighting", weighting);
        if (weighting == "manual")
            rc.model.weighting = LossWeighting::manual;
        else if (weighting == "homoscedastic" || weighting.empty())
            rc.model.weighting = LossWeighting::homoscedastic;
        else
            throw DomainError("config: model.weighting must be homoscedastic or manual");

        f.take_int("prior.t_window", rc.prior.t_window);
        f.take_int("prior.width", rc.prior.width);
        f.take_int("prior.l_enc", rc.prior.l_enc);
        f.take_int("prior.l_dec", rc.prior.l_dec);
        f.take_int("prior.latent", rc.prior.latent);
        f.take_int("prior.codebook", rc.prior.codebook);
        f.take_double("prior.beta_commit", rc.prior.beta_commit);

        f.take_long("train.steps", rc.train.steps);
        f.take_int("train.batch", rc.train.batch);
        f.take_double("train.lr0", rc.train.lr0);
        f.take_double("train.lr1", rc.train.lr1);
        f.take_long("train.drop_at", rc.train.drop_at);
        f.take_u64("train.seed", rc.train.seed);
        f.take_long("train.log_every", rc.train.log_every);

        f.take_int("prior_train.epochs", rc.prior_train.epochs);
        f.take_int("prior_train.batch", rc.prior_train.batch);
        f.take_double("prior_train.lr0", rc.prior_train.lr0);
        f.take_double("prior_train.decay_factor", rc.prior_train.decay_factor);
        f.take_int_list("prior_train.milestones", rc.prior_train.milestones);
        f.take_u64("prior_train.seed", rc.prior_train.seed);

        f.take_int("data.stride", rc.data_stride);

        f.take_int("ik.memory", rc.ik.memory);
        f.take_int("ik.max_iters", rc.ik.max_iters);
        f.take_double("ik.armijo_c", rc.ik.armijo_c);
        f.take_double("ik.shrink", rc.ik.shrink);
        f.take_double("ik.grad_tol", rc.ik.grad_tol);

        f.finish();
        rc.validate();
        return rc;
    }

    void validate() const {
        model.validate();
        prior.validate();
        if (model.t_window != prior.t_window)
            throw DomainError("config: model.t_window must equal prior.t_window");
        if (model.latent != prior.latent)
            throw DomainError("config: model.latent must equal prior.latent");
        if (train.steps < 1 || train.batch < 1) throw DomainError("config: bad train settings");
        if (data_stride < 1) throw DomainError("config: data.stride must be >= 1");
    }
};

}  // namespace memmlp
