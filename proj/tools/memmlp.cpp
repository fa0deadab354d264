// memmlp command-line tool: synthesize clips, train the prior and the model,
// evaluate, stream predictions, and benchmark latency.

#include <CLI11.hpp>
#include <cstdlib>
#include <iostream>

#include <memmlp/pipeline.hpp>
#include <memmlp/runconfig.hpp>
#include <memmlp/synth.hpp>

namespace {

using namespace memmlp;

int env_threads() {
    const char* v = std::getenv("MEMMLP_THREADS");
    if (!v) return 1;
    const int n = std::atoi(v);
    return n > 1 ? n : 1;
}

Skeleton load_or_default_skeleton(const std::string& path) {
    return path.empty() ? default_skeleton() : load_skeleton(path);
}

std::vector<MotionClip> load_clips(const std::vector<std::string>& paths) {
    if (paths.empty()) throw IoError("no clip files given");
    std::vector<MotionClip> clips;
    for (const auto& p : paths) clips.push_back(load_clip(p));
    return clips;
}

struct CommonArgs {
    std::string config_path;
    std::string skeleton_path;
    std::uint64_t seed = 1;
};

RunConfig resolve_config(const CommonArgs& args) {
    RunConfig rc;
    if (!args.config_path.empty()) rc = RunConfig::from_file(args.config_path);
    return rc;
}

void check_prior_compat(const MemMLPConfig& model, const VqVaeConfig& prior) {
    if (model.memory_layers.empty()) return;
    if (model.t_window != prior.t_window || model.latent != prior.latent)
        throw DomainError("model window/latent do not match the prior checkpoint");
}

int cmd_synth(const std::string& kind, std::uint64_t seed, double duration, double fps,
              const std::string& out, const std::string& skel_path) {
    const Skeleton skel = load_or_default_skeleton(skel_path);
    const MotionClip clip = synth_generate(synth_kind_from_string(kind), seed, duration, fps, skel);
    save_clip(clip, out);
    std::cout << "wrote " << out << " (" << clip.frame_count() << " frames @ " << clip.fps
              << " fps)\n";
    return 0;
}

int cmd_train_prior(const CommonArgs& args, const std::vector<std::string>& data,
                    const std::string& out, int epochs, int batch, int stride) {
    RunConfig rc = resolve_config(args);
    if (epochs > 0) rc.prior_train.epochs = epochs;
    if (batch > 0) rc.prior_train.batch = batch;
    if (stride > 0) rc.data_stride = stride;
    rc.prior_train.seed = args.seed;
    const Skeleton skel = load_or_default_skeleton(args.skeleton_path);
    const auto clips = load_clips(data);
    const auto ds = make_dataset<float>(clips, skel, rc.prior.t_window, rc.data_stride,
                                        env_threads());
    if (ds.samples.empty()) throw DomainError("no training windows; clips too short?");
    std::cout << "windows " << ds.samples.size() << " (skipped clips " << ds.skipped_clips
              << ")\n";
    auto prior = VqVae<float>::create(rc.prior, rc.prior_train.seed);
    rc.prior_train.verbose = true;
    const VqVaeTrainReport rep = train_vqvae(prior, ds, rc.prior_train);
    save_prior(prior, out);
    std::cout << "wrote " << out << " | first-epoch loss " << rep.epoch_loss.front()
              << " last-epoch loss " << rep.epoch_loss.back() << "\n";
    return 0;
}

int cmd_train(const CommonArgs& args, const std::vector<std::string>& data,
              const std::string& prior_path, const std::string& out, long steps, int batch,
              int stride) {
    RunConfig rc = resolve_config(args);
    if (steps > 0) rc.train.steps = steps;
    if (batch > 0) rc.train.batch = batch;
    if (stride > 0) rc.data_stride = stride;
    rc.train.seed = args.seed;
    auto prior = load_prior<float>(prior_path);
    if (args.config_path.empty()) {
        // no config: adopt the prior's geometry
        rc.model.t_window = prior.cfg.t_window;
        rc.model.latent = prior.cfg.latent;
    }
    check_prior_compat(rc.model, prior.cfg);
    const Skeleton skel = load_or_default_skeleton(args.skeleton_path);
    const auto clips = load_clips(data);
    const auto ds = make_dataset<float>(clips, skel, rc.model.t_window, rc.data_stride,
                                        env_threads());
    if (ds.samples.empty()) throw DomainError("no training windows; clips too short?");
    std::cout << "windows " << ds.samples.size() << " steps " << rc.train.steps << " batch "
              << rc.train.batch << "\n";
    auto model = MemMLP<float>::create(rc.model, rc.train.seed);
    rc.train.verbose = true;
    const auto history = train_model(model, prior, ds, skel, rc.train);
    save_model(model, out);
    std::cout << "wrote " << out << " | initial loss " << history.front().total
              << " final loss " << history.back().total << "\n";
    return 0;
}

int cmd_eval(const CommonArgs& args, const std::string& model_path,
             const std::string& prior_path, const std::vector<std::string>& data, bool use_ik,
             bool rot_only, const std::string& json_out) {
    RunConfig rc = resolve_config(args);
    auto model = load_model<float>(model_path);
    auto prior = load_prior<float>(prior_path);
    check_prior_compat(model.cfg, prior.cfg);
    const Skeleton skel = load_or_default_skeleton(args.skeleton_path);
    EvalOptions opts;
    opts.use_ik = use_ik;
    opts.rotation_pathway = rot_only;
    opts.blend_seed = args.seed;
    opts.ik = rc.ik;
    nlohmann::json all = nlohmann::json::array();
    for (const auto& path : data) {
        const MotionClip clip = load_clip(path);
        const MetricsReport rep = evaluate_clip(clip, model, prior, skel, opts);
        std::cout << "# " << path << "\n" << rep.to_text();
        nlohmann::json j = rep.to_json();
        j["clip"] = path;
        all.push_back(std::move(j));
    }
    if (!json_out.empty()) {
        std::ofstream out(json_out);
        if (!out) throw IoError("cannot write report: " + json_out);
        out << all.dump(2) << "\n";
    }
    return 0;
}

int cmd_infer(const CommonArgs& args, const std::string& model_path,
              const std::string& prior_path, const std::string& in_path,
              const std::string& out_path) {
    auto model = load_model<float>(model_path);
    auto prior = load_prior<float>(prior_path);
    check_prior_compat(model.cfg, prior.cfg);
    const Skeleton skel = load_or_default_skeleton(args.skeleton_path);
    const MotionClip input = load_clip(in_path);
    const MotionClip pred = predict_clip(input, model, prior, skel, args.seed);
    save_clip(pred, out_path);
    std::cout << "wrote " << out_path << " (" << pred.frame_count() << " frames)\n";
    return 0;
}

int cmd_bench(const CommonArgs& args, const std::string& model_path,
              const std::string& prior_path, int frames, int warmup, int threads,
              const std::string& json_out) {
    if (threads != 1) throw DomainError("bench runs single-threaded; --threads must be 1");
    auto model = load_model<float>(model_path);
    auto prior = load_prior<float>(prior_path);
    check_prior_compat(model.cfg, prior.cfg);
    const Skeleton skel = load_or_default_skeleton(args.skeleton_path);
    const BenchReport rep = bench(model, prior, skel, frames, warmup, args.seed);
    std::cout << rep.to_text();
    if (!json_out.empty()) {
        std::ofstream out(json_out);
        if (!out) throw IoError("cannot write report: " + json_out);
        out << rep.to_json().dump(2) << "\n";
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Mem-MLP: real-time full-body motion generation from sparse inputs"};
    app.require_subcommand(1);

    CommonArgs common;

    auto* synth = app.add_subcommand("synth", "generate a synthetic motion clip");
    std::string kind = "walk", synth_out, synth_skel;
    double duration = 6.0, fps = 60.0;
    std::uint64_t synth_seed = 1;
    synth->add_option("--kind", kind, "walk | sway | squat | still");
    synth->add_option("--seed", synth_seed, "generator seed");
    synth->add_option("--duration", duration, "seconds");
    synth->add_option("--fps", fps, "frames per second");
    synth->add_option("--out", synth_out, "output clip path (.json or .mclp)")->required();
    synth->add_option("--skeleton", synth_skel, "skeleton json (default built-in)");

    auto add_common = [&](CLI::App* cmd) {
        cmd->add_option("--config", common.config_path, "TOML-style config file");
        cmd->add_option("--skeleton", common.skeleton_path, "skeleton json (default built-in)");
        cmd->add_option("--seed", common.seed, "run seed");
    };

    auto* tp = app.add_subcommand("train-prior", "train and freeze the VQ-VAE motion prior");
    std::vector<std::string> tp_data;
    std::string tp_out = "prior.mmwt";
    int tp_epochs = 0, tp_batch = 0, tp_stride = 0;
    tp->add_option("--data", tp_data, "training clips")->required();
    tp->add_option("--out", tp_out, "output checkpoint");
    tp->add_option("--epochs", tp_epochs, "override epochs");
    tp->add_option("--batch", tp_batch, "override batch size");
    tp->add_option("--stride", tp_stride, "window stride");
    add_common(tp);

    auto* tr = app.add_subcommand("train", "train the Mem-MLP model");
    std::vector<std::string> tr_data;
    std::string tr_prior, tr_out = "model.mmwt";
    long tr_steps = 0;
    int tr_batch = 0, tr_stride = 0;
    tr->add_option("--data", tr_data, "training clips")->required();
    tr->add_option("--prior", tr_prior, "frozen prior checkpoint")->required();
    tr->add_option("--out", tr_out, "output checkpoint");
    tr->add_option("--steps", tr_steps, "override training steps");
    tr->add_option("--batch", tr_batch, "override batch size");
    tr->add_option("--stride", tr_stride, "window stride");
    add_common(tr);

    auto* ev = app.add_subcommand("eval", "evaluate a model against ground-truth clips");
    std::vector<std::string> ev_data;
    std::string ev_model, ev_prior, ev_json;
    bool ev_ik = false, ev_rot_only = false;
    ev->add_option("--model", ev_model, "model checkpoint")->required();
    ev->add_option("--prior", ev_prior, "prior checkpoint")->required();
    ev->add_option("--data", ev_data, "evaluation clips")->required();
    ev->add_flag("--ik", ev_ik, "refine rotations with L-BFGS IK before scoring");
    ev->add_flag("--rot-only", ev_rot_only, "realize positions through FK of the rotation branch");
    ev->add_option("--json", ev_json, "write a JSON report here");
    add_common(ev);

    auto* in = app.add_subcommand("infer", "stream a clip through the model, write predictions");
    std::string in_model, in_prior, in_in, in_out;
    in->add_option("--model", in_model, "model checkpoint")->required();
    in->add_option("--prior", in_prior, "prior checkpoint")->required();
    in->add_option("--in", in_in, "input clip")->required();
    in->add_option("--out", in_out, "output predicted clip")->required();
    add_common(in);

    auto* be = app.add_subcommand("bench", "measure per-frame streaming latency");
    std::string be_model, be_prior, be_json;
    int be_frames = 200, be_warmup = 20, be_threads = 1;
    be->add_option("--model", be_model, "model checkpoint")->required();
    be->add_option("--prior", be_prior, "prior checkpoint")->required();
    be->add_option("--frames", be_frames, "measured frames");
    be->add_option("--warmup", be_warmup, "warmup frames");
    be->add_option("--threads", be_threads, "must be 1");
    be->add_option("--json", be_json, "write a JSON report here");
    add_common(be);

    CLI11_PARSE(app, argc, argv);

    try {
        if (synth->parsed())
            return cmd_synth(kind, synth_seed, duration, fps, synth_out, synth_skel);
        if (tp->parsed())
            return cmd_train_prior(common, tp_data, tp_out, tp_epochs, tp_batch, tp_stride);
        if (tr->parsed())
            return cmd_train(common, tr_data, tr_prior, tr_out, tr_steps, tr_batch, tr_stride);
        if (ev->parsed())
            return cmd_eval(common, ev_model, ev_prior, ev_data, ev_ik, ev_rot_only, ev_json);
        if (in->parsed()) return cmd_infer(common, in_model, in_prior, in_in, in_out);
        if (be->parsed())
            return cmd_bench(common, be_model, be_prior, be_frames, be_warmup, be_threads, be_json);
    } catch (const memmlp::IoError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const memmlp::DomainError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const memmlp::ShapeError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 4;
    } catch (const memmlp::RangeError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 5;
    } catch (const memmlp::ContractError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 6;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
