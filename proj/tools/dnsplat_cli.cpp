// Copyright Contributors to the dnsplat Project
// SPDX-License-Identifier: Apache-2.0

#include <dnsplat/dnsplat.hpp>

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <thread>

namespace fs = std::filesystem;
using namespace dnsplat;

namespace {

enum Exit : int { kOk = 0, kUsage = 1, kNumerical = 2, kEmpty = 3 };

struct CommonOptions {
    std::string out;
    int threads        = std::max(1, static_cast<int>(std::thread::hardware_concurrency()));
    bool deterministic = false;
    std::string precision = "f64";

    ExecutionPolicy exec() const { return {threads, deterministic}; }
};

struct TrainOptions {
    std::string scene;
    std::optional<int> iters;
    std::optional<std::uint64_t> seed;
    std::optional<double> lambda1, lambda2, lambda3, beta;
    std::optional<std::string> gamma;
    int checkpoint_every = 0;
};

struct RenderOptions {
    std::string checkpoint, scene;
    std::optional<int> view;
};

struct MeshOptions {
    std::string checkpoint, scene, format = "ply";
    std::optional<double> voxel_size;
};

struct EvalOptions {
    std::string mesh, scene;
    std::optional<double> tau;
    std::size_t samples = 20000;
    std::uint64_t seed  = 1;
};

struct GradcheckOptionsCli {
    int cases          = 20;
    std::uint64_t seed = 1;
    int max_gaussians  = 8;
};

void add_common(CLI::App *cmd, CommonOptions &c, bool needs_out) {
    auto *out = cmd->add_option("--out", c.out, "Output directory (created if absent)");
    if (needs_out) out->required();
    cmd->add_option("--threads", c.threads, "Worker thread cap")->check(CLI::PositiveNumber);
    cmd->add_flag("--deterministic", c.deterministic, "Fixed work partition and reduction order");
    cmd->add_option("--precision", c.precision, "Scalar type")->check(CLI::IsMember({"f32", "f64"}));
}

fs::path prepare_out(const std::string &dir) {
    fs::path p(dir);
    fs::create_directories(p);
    return p;
}

double parse_gamma(const std::string &s) {
    std::size_t used = 0;
    double g         = 0;
    try {
        g = std::stod(s, &used);
    } catch (const std::logic_error &) {
        used = 0;
    }
    if (used != s.size() || !(g > 0)) throw CLI::ValidationError("--gamma", "must be a positive number or inf");
    return g;
}

template <typename T> void apply_spec_defaults(const nlohmann::json &j, TrainConfig<T> &cfg) {
    if (!j.is_object()) return;
    cfg.iters                   = j.value("iters", cfg.iters);
    cfg.weights.lambda1         = T(j.value("lambda1", double(cfg.weights.lambda1)));
    cfg.weights.lambda2         = T(j.value("lambda2", double(cfg.weights.lambda2)));
    cfg.weights.lambda3         = T(j.value("lambda3", double(cfg.weights.lambda3)));
    cfg.weights.gamma           = T(j.value("gamma", double(cfg.weights.gamma)));
    cfg.densify.scale_threshold = T(j.value("beta", double(cfg.densify.scale_threshold)));
}

template <typename T> std::vector<Camera<T>> spec_cameras(const SceneSpec &spec) {
    std::vector<Camera<T>> out;
    for (const auto &c : spec.cameras()) out.push_back(c.template cast<T>());
    return out;
}

template <typename T> int run_train(const TrainOptions &o, const CommonOptions &c) {
    SceneSpec spec = load_scene_spec(o.scene);
    if (o.seed) spec = reseeded(spec, *o.seed);
    auto cfg = default_train_config<T>(spec, 1500, o.seed.value_or(0));
    apply_spec_defaults(spec.train, cfg);
    if (o.iters) cfg.iters = *o.iters;
    if (o.lambda1) cfg.weights.lambda1 = T(*o.lambda1);
    if (o.lambda2) cfg.weights.lambda2 = T(*o.lambda2);
    if (o.lambda3) cfg.weights.lambda3 = T(*o.lambda3);
    if (o.gamma) cfg.weights.gamma = T(parse_gamma(*o.gamma));
    if (o.beta) cfg.densify.scale_threshold = T(*o.beta);
    cfg.adam.position_decay_steps = std::max(1, cfg.iters);
    cfg.exec                      = c.exec();
    cfg.checkpoint_every          = o.checkpoint_every;

    const fs::path out  = prepare_out(c.out);
    const auto views    = make_views(spec).views<T>();
    const auto initial  = initial_scene(spec).template cast<T>();
    const fs::path ckpt = out / "checkpoints";
    auto save_checkpoint = [&](int it, const Scene<T> &s, const OptimState<T> &st) {
        fs::create_directories(ckpt);
        char name[32];
        std::snprintf(name, sizeof name, "iter_%06d", it);
        write_file_bytes((ckpt / (std::string(name) + ".ply")).string(), save_ply(s));
        write_file_bytes((ckpt / (std::string(name) + ".opt")).string(), save_optimizer(st));
    };
    const auto r = train(initial, views, cfg, save_checkpoint);
    write_file_bytes((out / "loss.csv").string(), loss_csv(r.log));
    write_file_bytes((out / "densify.csv").string(), densify_csv(r.events));
    write_file_bytes((out / "scene.ply").string(), save_ply(r.scene));
    write_file_bytes((out / "optimizer.bin").string(), save_optimizer(r.optimizer));
    std::cout << "trained " << cfg.iters << " iterations, " << r.scene.size() << " Gaussians\n";
    return kOk;
}

template <typename T> int run_render(const RenderOptions &o, const CommonOptions &c) {
    const Scene<T> scene = load_ply<T>(read_file_bytes(o.checkpoint));
    const SceneSpec spec = load_scene_spec(o.scene);
    const auto cams      = spec_cameras<T>(spec);
    if (o.view && (*o.view < 0 || *o.view >= static_cast<int>(cams.size()))) {
        throw CLI::ValidationError("--view", "index out of range");
    }
    const fs::path out = prepare_out(c.out);
    for (std::size_t i = 0; i < cams.size(); ++i) {
        if (o.view && static_cast<int>(i) != *o.view) continue;
        const auto buf = rasterize(scene, cams[i], c.exec());
        char stem[32];
        std::snprintf(stem, sizeof stem, "view_%03zu_", i);
        const std::string base = (out / stem).string();
        write_png(base + "rgb.png", buf.color);
        write_png(base + "alpha.png", buf.alpha);
        write_png(base + "normal.png", buf.normal, -0.5, 0.5);
        write_file_bytes(base + "depth.pfm", encode_pfm(buf.depth));
        write_file_bytes(base + "normal.pfm", encode_pfm(buf.normal));
    }
    return kOk;
}

template <typename T> int run_extract(const MeshOptions &o, const CommonOptions &c) {
    const Scene<T> scene = load_ply<T>(read_file_bytes(o.checkpoint));
    const SceneSpec spec = load_scene_spec(o.scene);
    const Aabb<T> bounds = spec.bounds().template cast<T>();
    const T voxel        = o.voxel_size ? T(*o.voxel_size) : default_voxel_size(bounds);
    const fs::path out   = prepare_out(c.out);
    const auto ex        = extract_mesh(scene, spec_cameras<T>(spec), bounds, voxel, c.exec());
    std::cout << "voxel_size " << detail::shortest_repr(double(voxel)) << " voxels " << ex.volume.voxel_count()
              << " triangles " << ex.mesh.triangles.size() << '\n';
    if (ex.mesh.empty()) {
        std::cerr << "no surface\n";
        return kEmpty;
    }
    if (o.format == "obj") {
        write_file_bytes((out / "mesh.obj").string(), save_obj(ex.mesh));
    } else {
        write_file_bytes((out / "mesh.ply").string(), save_mesh_ply(ex.mesh));
    }
    return kOk;
}

int run_eval(const EvalOptions &o, const CommonOptions &c) {
    const auto mesh      = load_mesh<double>(read_file_bytes(o.mesh));
    const SceneSpec spec = load_scene_spec(o.scene);
    const double tau     = o.tau ? *o.tau : 2.0 * default_voxel_size(spec.bounds());
    if (mesh.empty()) {
        std::cerr << "no surface\n";
        return kEmpty;
    }
    const MeshMetrics m = evaluate_mesh(mesh, spec, tau, o.samples, o.seed);
    if (m.pred_samples == 0 || m.gt_samples == 0) {
        std::cerr << "no samples\n";
        return kEmpty;
    }
    const std::string csv = "precision,recall,fscore,chamfer,tau\n" + detail::shortest_repr(m.fscore.precision) + ',' +
                            detail::shortest_repr(m.fscore.recall) + ',' + detail::shortest_repr(m.fscore.fscore) +
                            ',' + detail::shortest_repr(m.chamfer) + ',' + detail::shortest_repr(tau) + '\n';
    std::cout << csv;
    if (!c.out.empty()) write_file_bytes((prepare_out(c.out) / "eval.csv").string(), csv);
    return kOk;
}

int run_gradcheck(const GradcheckOptionsCli &o, const CommonOptions &c) {
    if (c.precision != "f64") throw CLI::ValidationError("--precision", "gradcheck runs in f64 only");
    const GradcheckReport r = gradcheck_suite(o.cases, o.seed, o.max_gaussians);
    write_file_bytes((prepare_out(c.out) / "gradcheck.csv").string(), r.csv());
    const bool ok = gradcheck_passed(r);
    std::cout << (ok ? "gradcheck passed" : "gradcheck FAILED") << '\n';
    return ok ? kOk : kNumerical;
}

template <typename F64, typename F32> int by_precision(const CommonOptions &c, F64 &&f64, F32 &&f32) {
    return c.precision == "f32" ? f32() : f64();
}

} // namespace

int main(int argc, char **argv) {
    CLI::App app{"Gaussian splatting surface reconstruction with depth-normal regularization"};
    app.require_subcommand(1);

    CommonOptions common;
    TrainOptions train_o;
    RenderOptions render_o;
    MeshOptions mesh_o;
    EvalOptions eval_o;
    GradcheckOptionsCli grad_o;

    auto *train_cmd = app.add_subcommand("train", "Optimize a synthetic scene; writes loss/densify CSVs, PLY and optimizer state");
    train_cmd->add_option("--scene", train_o.scene, "Scene spec JSON")->required();
    train_cmd->add_option("--iters", train_o.iters, "Iterations")->check(CLI::NonNegativeNumber);
    train_cmd->add_option("--seed", train_o.seed, "Run seed (initialization, noise, virtual cameras)");
    train_cmd->add_option("--lambda1", train_o.lambda1, "Scale regularization weight")->check(CLI::NonNegativeNumber);
    train_cmd->add_option("--lambda2", train_o.lambda2, "Rendered-normal weight")->check(CLI::NonNegativeNumber);
    train_cmd->add_option("--lambda3", train_o.lambda3, "Depth-normal weight")->check(CLI::NonNegativeNumber);
    train_cmd->add_option("--gamma", train_o.gamma, "Confidence temperature (inf disables weighting)");
    train_cmd->add_option("--beta", train_o.beta, "Surface densification scale threshold")->check(CLI::PositiveNumber);
    train_cmd->add_option("--checkpoint-every", train_o.checkpoint_every, "Checkpoint period (0 = off)")
        ->check(CLI::NonNegativeNumber);
    add_common(train_cmd, common, true);

    auto *render_cmd = app.add_subcommand("render", "Render RGB, alpha, depth and normal images of a checkpoint");
    render_cmd->add_option("--checkpoint", render_o.checkpoint, "Scene PLY")->required();
    render_cmd->add_option("--scene", render_o.scene, "Scene spec JSON providing the cameras")->required();
    render_cmd->add_option("--view", render_o.view, "Render only this camera index");
    add_common(render_cmd, common, true);

    auto *mesh_cmd = app.add_subcommand("extract-mesh", "Fuse rendered depths into a TSDF and extract a mesh");
    mesh_cmd->add_option("--checkpoint", mesh_o.checkpoint, "Scene PLY")->required();
    mesh_cmd->add_option("--scene", mesh_o.scene, "Scene spec JSON providing cameras and bounds")->required();
    mesh_cmd->add_option("--voxel-size", mesh_o.voxel_size, "Voxel edge length (default: longest side / 128)")
        ->check(CLI::PositiveNumber);
    mesh_cmd->add_option("--format", mesh_o.format, "Mesh file format")->check(CLI::IsMember({"ply", "obj"}));
    add_common(mesh_cmd, common, true);

    auto *eval_cmd = app.add_subcommand("eval", "Precision, recall, F-score and Chamfer of a mesh against a spec");
    eval_cmd->add_option("--mesh", eval_o.mesh, "Mesh (PLY or OBJ)")->required();
    eval_cmd->add_option("--scene", eval_o.scene, "Scene spec JSON")->required();
    eval_cmd->add_option("--tau", eval_o.tau, "F-score distance threshold (default: 2 voxels)")->check(CLI::PositiveNumber);
    eval_cmd->add_option("--samples", eval_o.samples, "Surface samples per side")->check(CLI::PositiveNumber);
    eval_cmd->add_option("--seed", eval_o.seed, "Sampling seed");
    add_common(eval_cmd, common, false);

    auto *grad_cmd = app.add_subcommand("gradcheck", "Compare analytic and finite-difference gradients on random scenes");
    grad_cmd->add_option("--cases", grad_o.cases, "Random scenes")->check(CLI::PositiveNumber);
    grad_cmd->add_option("--seed", grad_o.seed, "First scene seed");
    grad_cmd->add_option("--max-gaussians", grad_o.max_gaussians, "Gaussians per scene")->check(CLI::Range(1, 8));
    add_common(grad_cmd, common, true);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError &e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kUsage;
    }

    try {
        if (train_cmd->parsed())
            return by_precision(common, [&] { return run_train<double>(train_o, common); },
                                [&] { return run_train<float>(train_o, common); });
        if (render_cmd->parsed())
            return by_precision(common, [&] { return run_render<double>(render_o, common); },
                                [&] { return run_render<float>(render_o, common); });
        if (mesh_cmd->parsed())
            return by_precision(common, [&] { return run_extract<double>(mesh_o, common); },
                                [&] { return run_extract<float>(mesh_o, common); });
        if (eval_cmd->parsed()) return run_eval(eval_o, common);
        if (grad_cmd->parsed()) return run_gradcheck(grad_o, common);
    } catch (const NumericalError &e) {
        std::cerr << "numerical failure: " << e.what() << '\n';
        return kNumerical;
    } catch (const CLI::Error &e) {
        std::cerr << e.what() << '\n' << app.help();
        return kUsage;
    } catch (const std::exception &e) {
        std::cerr << "error: " << e.what() << '\n';
        return kUsage;
    }
    return kUsage;
}
