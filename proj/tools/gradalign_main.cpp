// gradalign: train gradient-alignment-regularized networks and measure the
// robustness of their feature attributions.
//
// Exit codes: 0 success, 1 configuration error, 2 runtime failure.

#include <CLI11.hpp>

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "gradalign/attack.hpp"
#include "gradalign/attributions.hpp"
#include "gradalign/criteria.hpp"
#include "gradalign/data.hpp"
#include "gradalign/metrics.hpp"
#include "gradalign/network.hpp"
#include "gradalign/trainer.hpp"

namespace fs = std::filesystem;
using namespace gradalign;

namespace {

constexpr const char* kToolVersion = "gradalign 0.1.0";

// ---------------------------------------------------------------------------
// small helpers

std::uint64_t fnv1a64_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    std::uint64_t h = 1469598103934665603ull;
    char c;
    while (is.get(c)) {
        h ^= static_cast<unsigned char>(c);
        h *= 1099511628211ull;
    }
    return h;
}

// accepts "8/255" or a plain decimal, parsed exactly
double parse_fraction(const std::string& s) {
    auto slash = s.find('/');
    if (slash == std::string::npos) return std::stod(s);
    double num = std::stod(s.substr(0, slash));
    double den = std::stod(s.substr(slash + 1));
    if (den == 0.0) throw CLI::ValidationError("fraction", "zero denominator in '" + s + "'");
    return num / den;
}

std::vector<double> parse_fraction_list(const std::string& s) {
    std::vector<double> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(parse_fraction(item));
    return out;
}

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, sep)) out.push_back(item);
    return out;
}

// "moons:n=400,noise=0.1" / "digits:n=800,classes=4,side=16" /
// "cifar:path=data_batch_1.bin,limit=200,classes=0;1;2"
Dataset load_dataset(const std::string& spec, std::uint64_t seed) {
    auto colon = spec.find(':');
    std::string kind = spec.substr(0, colon);
    std::map<std::string, std::string> kv;
    if (colon != std::string::npos) {
        for (const auto& part : split(spec.substr(colon + 1), ',')) {
            auto eq = part.find('=');
            if (eq == std::string::npos)
                throw Error("dataset spec: expected key=value, got '" + part + "'");
            kv[part.substr(0, eq)] = part.substr(eq + 1);
        }
    }
    auto get = [&](const std::string& k, const std::string& fallback) {
        auto it = kv.find(k);
        return it == kv.end() ? fallback : it->second;
    };
    if (kind == "moons") {
        return make_moons_2d(std::stoi(get("n", "400")), std::stod(get("noise", "0.1")), seed);
    }
    if (kind == "digits") {
        return make_synthetic_digits(std::stoi(get("n", "800")), std::stoi(get("classes", "4")),
                                     std::stoi(get("side", "16")), seed);
    }
    if (kind == "cifar") {
        std::string path = get("path", "");
        if (path.empty()) throw Error("dataset spec: cifar needs path=...");
        std::vector<int> subset;
        for (const auto& c : split(get("classes", ""), ';'))
            if (!c.empty()) subset.push_back(std::stoi(c));
        return load_cifar_binary(path, subset, std::stoi(get("limit", "-1")),
                                 get("standardize", "0") == "1");
    }
    throw Error("dataset spec: unknown kind '" + kind + "' (moons, digits, cifar)");
}

// "mlp:2,16,2" / "lenet" / "lenet-mini:in=1,side=16,classes=4"
NetSpec parse_net_spec(const std::string& spec, Activation act, double beta) {
    auto colon = spec.find(':');
    std::string kind = spec.substr(0, colon);
    std::string rest = colon == std::string::npos ? "" : spec.substr(colon + 1);
    if (kind == "mlp") {
        std::vector<int> widths;
        for (const auto& w : split(rest, ',')) widths.push_back(std::stoi(w));
        return mlp_spec(widths, act, beta);
    }
    std::map<std::string, std::string> kv;
    for (const auto& part : split(rest, ',')) {
        if (part.empty()) continue;
        auto eq = part.find('=');
        kv[part.substr(0, eq)] = part.substr(eq + 1);
    }
    auto geti = [&](const std::string& k, int fallback) {
        auto it = kv.find(k);
        return it == kv.end() ? fallback : std::stoi(it->second);
    };
    if (kind == "lenet")
        return lenet_spec(geti("in", 3), geti("side", 32), geti("classes", 10), act, beta);
    if (kind == "lenet-mini")
        return lenet_mini_spec(geti("in", 1), geti("side", 16), geti("classes", 4), act, beta);
    throw Error("network spec: unknown kind '" + kind + "' (mlp, lenet, lenet-mini)");
}

struct ManifestWriter {
    std::string out_dir;
    std::string command_line;
    std::string config_echo;
    std::vector<std::string> artifacts;
    std::chrono::steady_clock::time_point started = std::chrono::steady_clock::now();

    void note(const std::string& path) { artifacts.push_back(path); }

    void write(std::uint64_t seed) const {
        if (out_dir.empty()) return;
        std::ofstream os(out_dir + "/manifest.txt");
        os << kToolVersion << "\n";
        os << "command " << command_line << "\n";
        os << "seed " << seed << "\n";
        os << "wall_seconds "
           << std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count()
           << "\n";
        os << "\n[config]\n" << config_echo;
        os << "\n[artifacts]\n";
        for (const auto& a : artifacts) {
            if (fs::exists(a))
                os << a << " fnv1a64 " << std::hex << fnv1a64_file(a) << std::dec << "\n";
        }
    }
};

void ensure_out_dir(const std::string& out) {
    if (!out.empty()) fs::create_directories(out);
}

std::string join_args(int argc, char** argv) {
    std::string s;
    for (int i = 0; i < argc; ++i) {
        if (i) s += ' ';
        s += argv[i];
    }
    return s;
}

// ---------------------------------------------------------------------------
// subcommand state

struct TrainArgs {
    std::string net = "mlp:2,16,2";
    std::string activation = "softplus";
    double beta = 3.0;
    std::string reg = "ce";
    double lambda_cos = 1.0, lambda_l2 = 0.1, lambda = 0.1;
    std::string eps = "8/255";
    int epochs = 30, batch = 128;
    std::string optimizer = "adam";
    double lr = 1e-3, weight_decay = 4e-5;
    std::string milestones;
    double decay = 0.1;
    bool no_detach = false;
    std::uint64_t seed = 0;
    std::string data = "digits:n=800,classes=4,side=16";
    double test_fraction = 0.25;
    std::string teacher;
    std::string out = "run";
    int hessian_probes = 1;
    double iga_eps = 8.0 / 255.0;
    double atex_eps = 2.0;
};

struct EvalCommon {
    std::string checkpoint;
    std::string data = "digits:n=200,classes=4,side=16";
    std::uint64_t seed = 0;
    std::string out = ".";
};

int run_train(const TrainArgs& a, ManifestWriter& manifest) {
    RunConfig cfg;
    cfg.reg = regularizer_from_name(a.reg);
    cfg.lambda_cos = a.lambda_cos;
    cfg.lambda_l2 = a.lambda_l2;
    cfg.lambda = a.lambda;
    cfg.perturbation.epsilon = parse_fraction(a.eps);
    cfg.optimizer.kind = optimizer_from_name(a.optimizer);
    cfg.optimizer.lr = a.lr;
    cfg.optimizer.weight_decay = a.weight_decay;
    cfg.epochs = a.epochs;
    cfg.batch_size = a.batch;
    for (const auto& m : split(a.milestones, ','))
        if (!m.empty()) cfg.lr_milestones.push_back(std::stoi(m));
    cfg.lr_decay = a.decay;
    cfg.softplus_beta = a.beta;
    cfg.detach_base_gradient = !a.no_detach;
    cfg.seed = a.seed;
    cfg.hessian_probes = a.hessian_probes;
    cfg.iga_eps_attack = a.iga_eps;
    cfg.atex_epsilon = a.atex_eps;

    Dataset full = load_dataset(a.data, a.seed);
    auto [train_ds, test_ds] = split_train_test(full, a.test_fraction, a.seed);

    NetSpec spec = parse_net_spec(a.net, activation_from_name(a.activation), a.beta);
    Network net = init_parameters(spec, a.seed);

    Network teacher;
    const Network* teacher_ptr = nullptr;
    if (!a.teacher.empty()) {
        teacher = load_checkpoint(a.teacher);
        teacher_ptr = &teacher;
    }

    TrainReport report = train(net, train_ds, test_ds, cfg, a.out, teacher_ptr);
    std::cout << "final test accuracy " << report.final_test_accuracy << "\n";
    std::cout << "total seconds " << report.total_seconds << "\n";
    std::cout << "checkpoint " << report.checkpoint_path << "\n";
    manifest.note(a.out + "/checkpoint.bin");
    manifest.note(a.out + "/loss_log.csv");
    return 0;
}

int run_attribute(const EvalCommon& c, const std::string& method, int limit,
                  ManifestWriter& manifest) {
    Network net = load_checkpoint(c.checkpoint);
    Dataset ds = load_dataset(c.data, c.seed);
    AttrMethod m = attr_method_from_name(method);
    AttrOptions opts;
    opts.lo = ds.lo;
    opts.hi = ds.hi;
    opts.seed = c.seed;
    int n = std::min<int>(limit, static_cast<int>(ds.size()));
    for (int i = 0; i < n; ++i) {
        AttributionMap map = compute_attribution(net, ds.inputs[i], ds.labels[i], m, opts);
        std::string base = c.out + "/attr_" + std::to_string(i);
        export_heatmap(map, base);
        manifest.note(base + ".pgm");
        manifest.note(base + ".f64");
        manifest.note(base + ".txt");
    }
    std::cout << "wrote " << n << " heatmaps under " << c.out << "\n";
    return 0;
}

int run_attack_cmd(const EvalCommon& c, const std::string& mode, const std::string& method,
                   const std::string& eps, const std::string& step, int iters,
                   const std::string& target, int limit, bool monotone,
                   ManifestWriter& manifest) {
    Network net = load_checkpoint(c.checkpoint);
    Dataset ds = load_dataset(c.data, c.seed);
    AttackConfig cfg;
    cfg.mode = mode == "untargeted" ? AttackMode::untargeted : AttackMode::targeted;
    cfg.method = attr_method_from_name(method);
    cfg.epsilon = parse_fraction(eps);
    cfg.step_size = step.empty() ? 0.0 : parse_fraction(step);
    cfg.iterations = iters;
    cfg.revert_on_increase = monotone;
    cfg.seed = c.seed;
    if (cfg.mode == AttackMode::targeted) {
        if (target.rfind("frame:", 0) != 0)
            throw Error("attack: targeted mode needs --target frame:<width>");
        int width = std::stoi(target.substr(6));
        cfg.target_map = make_frame_target(ds.inputs.empty() ? Shape{1, 16, 16}
                                                             : ds.inputs.front().shape(),
                                           width)
                             .scores;
    }

    std::string csv_path = c.out + "/attack_summary.csv";
    std::ofstream csv(csv_path);
    csv << "sample,final_loss,ssim_target,pcc_target,cossim_target,ssim_orig,pcc_orig,cossim_orig,"
           "pred_class,preserved\n";
    AttrOptions opts;
    opts.lo = ds.lo;
    opts.hi = ds.hi;
    int n = std::min<int>(limit, static_cast<int>(ds.size()));
    for (int i = 0; i < n; ++i) {
        const Tensor& x = ds.inputs[i];
        AttackResult r = run_aam(net, x, cfg, ds.lo, ds.hi);
        int y = predict_class(net, x);
        AttributionMap orig = compute_attribution(net, x, y, cfg.method, opts);
        auto dump = [&](const std::string& tag, const Tensor& t) {
            std::string path = c.out + "/" + tag + "_" + std::to_string(i) + ".f64";
            std::ofstream os(path, std::ios::binary);
            os.write(reinterpret_cast<const char*>(t.data()),
                     static_cast<std::streamsize>(t.size() * sizeof(double)));
            manifest.note(path);
        };
        dump("x", x);
        dump("xadv", r.x_adv);
        dump("map", orig.scores);
        dump("mapadv", r.final_map.scores);
        auto sim3 = [&](const Tensor& a, const Tensor& b, Similarity kind) {
            try {
                return similarity(a, b, kind);
            } catch (const Error&) {
                return 0.0;  // constant map: correlation undefined
            }
        };
        double st_s = 0, st_p = 0, st_c = 0;
        if (cfg.target_map) {
            st_s = sim3(r.final_map.scores, *cfg.target_map, Similarity::ssim);
            st_p = sim3(r.final_map.scores, *cfg.target_map, Similarity::pcc);
            st_c = sim3(r.final_map.scores, *cfg.target_map, Similarity::cossim);
        }
        csv << i << "," << (r.loss_trace.empty() ? 0.0 : r.loss_trace.back()) << "," << st_s << ","
            << st_p << "," << st_c << "," << sim3(r.final_map.scores, orig.scores, Similarity::ssim)
            << "," << sim3(r.final_map.scores, orig.scores, Similarity::pcc) << ","
            << sim3(r.final_map.scores, orig.scores, Similarity::cossim) << ","
            << predict_class(net, r.x_adv) << "," << (r.prediction_preserved ? 1 : 0) << "\n";
    }
    manifest.note(csv_path);
    std::cout << "attacked " << n << " samples, summary in " << csv_path << "\n";
    return 0;
}

int run_eval_rps(const EvalCommon& c, const std::string& methods, const std::string& measures,
                 const std::string& eps_list, int samples, ManifestWriter& manifest) {
    Network net = load_checkpoint(c.checkpoint);
    Dataset ds = load_dataset(c.data, c.seed);
    std::string csv_path = c.out + "/rps.csv";
    std::ofstream csv(csv_path);
    csv << "method,measure,eps,value\n";
    AttrOptions opts;
    opts.lo = ds.lo;
    opts.hi = ds.hi;
    opts.seed = c.seed;
    for (const auto& method : split(methods, ',')) {
        for (const auto& measure : split(measures, ',')) {
            for (double eps : parse_fraction_list(eps_list)) {
                double v = random_perturbation_similarity(
                    net, ds, attr_method_from_name(method), similarity_from_name(measure), eps,
                    samples, c.seed, opts);
                char line[160];
                std::snprintf(line, sizeof(line), "%s,%s,%.17g,%.17g\n", method.c_str(),
                              measure.c_str(), eps, v);
                csv << line;
            }
        }
    }
    manifest.note(csv_path);
    std::cout << "rps table written to " << csv_path << "\n";
    return 0;
}

int run_eval_insertion(const EvalCommon& c, const std::string& method, bool adversarial,
                       const std::string& eps, int iters, const std::string& target, bool percent,
                       ManifestWriter& manifest) {
    Network net = load_checkpoint(c.checkpoint);
    Dataset ds = load_dataset(c.data, c.seed);
    AttrOptions opts;
    opts.lo = ds.lo;
    opts.hi = ds.hi;
    opts.seed = c.seed;
    InsertionCurve curve;
    if (adversarial) {
        AttackConfig cfg;
        cfg.method = attack_differentiable(attr_method_from_name(method))
                         ? attr_method_from_name(method)
                         : AttrMethod::grad;  // ordering methods without a derivative attack via grad
        cfg.epsilon = parse_fraction(eps);
        cfg.iterations = iters;
        cfg.seed = c.seed;
        if (target.rfind("frame:", 0) == 0)
            cfg.target_map =
                make_frame_target(ds.inputs.front().shape(), std::stoi(target.substr(6))).scores;
        curve = adv_insertion_curve(net, ds, attr_method_from_name(method), cfg,
                                    default_gamma_grid(), opts);
    } else {
        curve = insertion_curve(net, ds, attr_method_from_name(method), default_gamma_grid(), opts);
    }
    std::string csv_path = c.out + (adversarial ? "/adv_insertion.csv" : "/insertion.csv");
    std::ofstream csv(csv_path);
    csv << "gamma,mean_probability\n";
    for (std::size_t i = 0; i < curve.gammas.size(); ++i) {
        char line[96];
        std::snprintf(line, sizeof(line), "%.2f,%.17g\n", curve.gammas[i],
                      curve.probabilities[i]);
        csv << line;
    }
    manifest.note(csv_path);
    double shown = percent ? 100.0 * curve.mean_over_gamma : curve.mean_over_gamma;
    std::cout << (adversarial ? "adv-insertion" : "insertion") << " mean over gamma " << shown
              << (percent ? " (x100)" : "") << "\n";
    return 0;
}

int run_surface(const EvalCommon& c, int grid, const std::string& range, const std::string& pair,
                ManifestWriter& manifest) {
    Network net = load_checkpoint(c.checkpoint);
    if (net.input_shape != Shape{2})
        throw Error("surface: checkpoint must take 2-dimensional inputs, has " +
                    shape_str(net.input_shape));
    auto bounds = split(range, ':');
    if (bounds.size() != 2) throw Error("surface: --range expects lo:hi");
    const double lo = std::stod(bounds[0]), hi = std::stod(bounds[1]);
    if (grid < 2) throw Error("surface: grid must be at least 2");

    std::string csv_path = c.out + "/surface.csv";
    std::ofstream csv(csv_path);
    csv << "x,y,logit_diff,grad_x,grad_y\n";
    for (int i = 0; i < grid; ++i) {
        for (int j = 0; j < grid; ++j) {
            double px = lo + (hi - lo) * j / (grid - 1);
            double py = lo + (hi - lo) * i / (grid - 1);
            Tensor p({2}, {px, py});
            NoRecord plain;
            Tensor logits = forward_logits(net, p);
            // gradient of the class-1-minus-class-0 margin
            Tensor g1 = input_gradient_value(net, p, 1);
            Tensor g0 = input_gradient_value(net, p, 0);
            char line[200];
            std::snprintf(line, sizeof(line), "%.17g,%.17g,%.17g,%.17g,%.17g\n", px, py,
                          logits[1] - logits[0], g1[0] - g0[0], g1[1] - g0[1]);
            csv << line;
        }
    }
    manifest.note(csv_path);

    // the two nearby probe points reported next to the figure
    Tensor a(Shape{2}), b(Shape{2});
    if (pair == "auto") {
        // closest grid point to the decision boundary, paired with a fixed offset
        double best = 1e308;
        for (int i = 0; i < grid; ++i)
            for (int j = 0; j < grid; ++j) {
                double px = lo + (hi - lo) * j / (grid - 1);
                double py = lo + (hi - lo) * i / (grid - 1);
                NoRecord plain;
                Tensor logits = forward_logits(net, Tensor({2}, {px, py}));
                double margin = std::abs(logits[1] - logits[0]);
                if (margin < best) {
                    best = margin;
                    a = Tensor({2}, {px, py});
                }
            }
        double off = 0.12 * (hi - lo) / 4.0;
        b = Tensor({2}, {a[0] + off, a[1] + off});
    } else {
        auto pts = split(pair, ':');
        if (pts.size() != 2) throw Error("surface: --pair expects x1,y1:x2,y2 or auto");
        auto p1 = split(pts[0], ','), p2 = split(pts[1], ',');
        a = Tensor({2}, {std::stod(p1[0]), std::stod(p1[1])});
        b = Tensor({2}, {std::stod(p2[0]), std::stod(p2[1])});
    }
    Tensor ga = input_gradient_value(net, a, 1);
    Tensor gb = input_gradient_value(net, b, 1);
    Tensor ga0 = input_gradient_value(net, a, 0);
    Tensor gb0 = input_gradient_value(net, b, 0);
    for (int i = 0; i < 2; ++i) {
        ga[i] -= ga0[i];
        gb[i] -= gb0[i];
    }
    double d0 = ga[0] - gb[0], d1 = ga[1] - gb[1];
    double l2 = std::sqrt(d0 * d0 + d1 * d1);
    double na = std::sqrt(ga[0] * ga[0] + ga[1] * ga[1]);
    double nb = std::sqrt(gb[0] * gb[0] + gb[1] * gb[1]);
    double cos_sim = (na == 0.0 || nb == 0.0) ? 0.0 : (ga[0] * gb[0] + ga[1] * gb[1]) / (na * nb);
    std::string pair_path = c.out + "/pair_stats.csv";
    std::ofstream pcsv(pair_path);
    pcsv << "x1,y1,x2,y2,l2_distance,cossim\n";
    char line[256];
    std::snprintf(line, sizeof(line), "%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", a[0], a[1], b[0],
                  b[1], l2, cos_sim);
    pcsv << line;
    manifest.note(pair_path);
    std::cout << "pair l2_distance " << l2 << " cossim " << cos_sim << "\n";
    return 0;
}

int run_bound_sweep(const EvalCommon& c, const std::string& eps_list, int points,
                    ManifestWriter& manifest) {
    Network net = load_checkpoint(c.checkpoint);
    if (net.activation == Activation::relu)
        throw Error("bound-sweep: requires a twice differentiable checkpoint, not relu");
    Dataset ds = load_dataset(c.data, c.seed);
    if (ds.inputs.empty()) throw Error("bound-sweep: dataset is empty");
    std::string csv_path = c.out + "/bound_sweep.csv";
    std::ofstream csv(csv_path);
    csv << "eps,mean_crc,mean_bound,holds_fraction\n";
    Rng rng(c.seed);
    for (double eps : parse_fraction_list(eps_list)) {
        double sum_crc = 0.0, sum_bound = 0.0;
        int holds = 0, used = 0;
        PerturbationSpec ps;
        ps.sampler = PerturbationSampler::unit_direction;
        ps.epsilon = 1.0;
        for (int i = 0; i < points; ++i) {
            const Tensor& x = ds.inputs[i % ds.size()];
            int y = ds.labels[i % ds.size()];
            Tensor dir = sample_perturbation(ps, x.shape(), rng);
            BoundPair p = crc_upper_bound(net, x, y, dir, eps);
            if (p.degenerate) continue;
            ++used;
            sum_crc += p.measured;
            sum_bound += p.bound;
            if (p.measured <= p.bound * 1.01 + 1e-8) ++holds;
        }
        if (used == 0) continue;
        char line[160];
        std::snprintf(line, sizeof(line), "%.17g,%.17g,%.17g,%.17g\n", eps, sum_crc / used,
                      sum_bound / used, static_cast<double>(holds) / used);
        csv << line;
    }
    manifest.note(csv_path);
    std::cout << "bound sweep written to " << csv_path << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"training and attribution-robustness laboratory"};
    app.require_subcommand(1);
    app.set_version_flag("--version", kToolVersion);

    TrainArgs targs;
    EvalCommon common;
    std::string method = "grad";
    std::string methods = "grad,xgrad,gbp,lrp";
    std::string measures = "cossim,pcc,ssim";
    std::string eps_list = "4/255,8/255,16/255";
    std::string attack_eps = "4/255";
    std::string attack_step;
    std::string attack_mode = "targeted";
    std::string target = "frame:2";
    std::string range = "-1.5:2.5";
    std::string pair = "auto";
    int iters = 100, samples = 10, limit = 16, grid = 41, points = 200;
    bool adversarial = false, percent = false, monotone = false;

    auto add_common = [&](CLI::App* cmd, bool needs_checkpoint = true) {
        if (needs_checkpoint)
            cmd->add_option("--checkpoint", common.checkpoint, "network checkpoint file")
                ->required();
        cmd->add_option("--data", common.data, "dataset spec (moons:/digits:/cifar:)");
        cmd->add_option("--seed", common.seed, "random seed");
        cmd->add_option("--out", common.out, "output directory");
        cmd->set_config("--config", "", "flat key=value config file; flags override");
    };

    CLI::App* train_cmd = app.add_subcommand("train", "train a network under a chosen loss");
    train_cmd->add_option("--net", targs.net, "mlp:w0,w1,... | lenet | lenet-mini:in=,side=,classes=");
    train_cmd->add_option("--activation", targs.activation, "relu | softplus | identity");
    train_cmd->add_option("--beta", targs.beta, "softplus sharpness");
    train_cmd->add_option("--reg", targs.reg, "ce|hessian|l2|cos|l2cos|maxent|atex|iga");
    train_cmd->add_option("--lambda-cos", targs.lambda_cos, "cosine-term weight");
    train_cmd->add_option("--lambda-l2", targs.lambda_l2, "l2-term weight");
    train_cmd->add_option("--lambda", targs.lambda, "single-knob regularizer weight");
    train_cmd->add_option("--eps", targs.eps, "perturbation radius, fraction or decimal");
    train_cmd->add_option("--epochs", targs.epochs);
    train_cmd->add_option("--batch", targs.batch);
    train_cmd->add_option("--optimizer", targs.optimizer, "sgd | adam | adamw");
    train_cmd->add_option("--lr", targs.lr);
    train_cmd->add_option("--wd", targs.weight_decay);
    train_cmd->add_option("--milestones", targs.milestones, "comma-separated decay epochs");
    train_cmd->add_option("--decay", targs.decay);
    train_cmd->add_flag("--no-detach", targs.no_detach,
                        "keep the base-gradient graph inside the regularizers");
    train_cmd->add_option("--seed", targs.seed);
    train_cmd->add_option("--data", targs.data);
    train_cmd->add_option("--test-fraction", targs.test_fraction);
    train_cmd->add_option("--teacher", targs.teacher, "teacher checkpoint (atex)");
    train_cmd->add_option("--out", targs.out);
    train_cmd->add_option("--hessian-probes", targs.hessian_probes);
    train_cmd->add_option("--iga-eps", targs.iga_eps);
    train_cmd->add_option("--atex-eps", targs.atex_eps);
    train_cmd->set_config("--config", "", "flat key=value config file; flags override");

    CLI::App* attr_cmd = app.add_subcommand("attribute", "export heatmaps for a checkpoint");
    add_common(attr_cmd);
    attr_cmd->add_option("--method", method, "grad|xgrad|gbp|lrp|smoothgrad");
    attr_cmd->add_option("--limit", limit, "number of samples");

    CLI::App* attack_cmd = app.add_subcommand("attack", "attribution-manipulation attacks");
    add_common(attack_cmd);
    attack_cmd->add_option("--mode", attack_mode, "targeted | untargeted");
    attack_cmd->add_option("--method", method, "grad|xgrad|gbp");
    attack_cmd->add_option("--eps", attack_eps, "l-inf radius, fraction or decimal");
    attack_cmd->add_option("--step", attack_step, "step size (default eps/10)");
    attack_cmd->add_option("--iters", iters);
    attack_cmd->add_option("--target", target, "frame:<width>");
    attack_cmd->add_option("--limit", limit);
    attack_cmd->add_flag("--monotone", monotone, "revert steps that increase the objective");

    CLI::App* rps_cmd = app.add_subcommand("eval-rps", "random-perturbation similarity table");
    add_common(rps_cmd);
    rps_cmd->add_option("--methods", methods);
    rps_cmd->add_option("--measures", measures);
    rps_cmd->add_option("--eps-list", eps_list);
    rps_cmd->add_option("--samples", samples, "perturbation draws per input");

    CLI::App* ins_cmd = app.add_subcommand("eval-insertion", "insertion game curves");
    add_common(ins_cmd);
    ins_cmd->add_option("--method", method);
    ins_cmd->add_flag("--adv", adversarial, "order by the attacked attribution");
    ins_cmd->add_option("--eps", attack_eps, "attack radius for --adv");
    ins_cmd->add_option("--iters", iters, "attack iterations for --adv");
    ins_cmd->add_option("--target", target, "attack target for --adv");
    ins_cmd->add_flag("--percent", percent, "display the mean as a percentage");

    CLI::App* surf_cmd = app.add_subcommand("surface", "decision-surface and gradient-field export");
    add_common(surf_cmd);
    surf_cmd->add_option("--grid", grid, "points per axis");
    surf_cmd->add_option("--range", range, "lo:hi for both axes");
    surf_cmd->add_option("--pair", pair, "x1,y1:x2,y2 or auto");

    CLI::App* bound_cmd = app.add_subcommand("bound-sweep",
                                             "measured cosine criterion against its curvature bound");
    add_common(bound_cmd);
    bound_cmd->add_option("--eps-list", eps_list);
    bound_cmd->add_option("--points", points, "sampled (x, direction) pairs per radius");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        ManifestWriter manifest;
        manifest.command_line = join_args(argc, argv);
        CLI::App* active = app.get_subcommands().front();
        manifest.config_echo = active->config_to_str(true, true);
        std::uint64_t seed = common.seed;

        int rc = 0;
        if (train_cmd->parsed()) {
            ensure_out_dir(targs.out);
            manifest.out_dir = targs.out;
            seed = targs.seed;
            rc = run_train(targs, manifest);
        } else {
            ensure_out_dir(common.out);
            manifest.out_dir = common.out;
            if (attr_cmd->parsed()) rc = run_attribute(common, method, limit, manifest);
            else if (attack_cmd->parsed())
                rc = run_attack_cmd(common, attack_mode, method, attack_eps, attack_step, iters,
                                    target, limit, monotone, manifest);
            else if (rps_cmd->parsed())
                rc = run_eval_rps(common, methods, measures, eps_list, samples, manifest);
            else if (ins_cmd->parsed())
                rc = run_eval_insertion(common, method, adversarial, attack_eps, iters, target,
                                        percent, manifest);
            else if (surf_cmd->parsed()) rc = run_surface(common, grid, range, pair, manifest);
            else if (bound_cmd->parsed()) rc = run_bound_sweep(common, eps_list, points, manifest);
        }
        manifest.write(seed);
        return rc;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}
