#include <CLI11.hpp>
#include <cmath>
#include <cstdio>
#include <iostream>
#include <string>

#include "mup/harness.hpp"
#include "mup/kernels.hpp"
#include "mup/run_config.hpp"

using namespace mup;

namespace {

enum Exit : int { kOk = 0, kUsage = 1, kConfig = 2, kCompute = 3, kIo = 4, kVerifyFailed = 5 };

bool g_verbose = false;

void log(const std::string& msg) {
    if (g_verbose) std::cerr << "[mupctl] " << msg << '\n';
}

void write_json(const std::filesystem::path& path, const nlohmann::json& j) {
    write_text(path, j.dump(2) + "\n");
    log("wrote " + path.string());
}

RunConfig load_config(const std::string& path, const std::string& out_override) {
    RunConfig cfg = load_run_config(path);
    if (!out_override.empty()) cfg.output_dir = out_override;
    return cfg;
}

Zoo load_zoo(const RunConfig& cfg) {
    Zoo zoo;
    for (const auto& id : cfg.model_ids()) {
        log("loading " + cfg.model_path(id).string());
        zoo.push_back({id, load_network_file(cfg.model_path(id))});
    }
    return zoo;
}

const ZooModel& find_model(const Zoo& zoo, const std::string& id) {
    for (const auto& m : zoo)
        if (m.id == id) return m;
    throw ConfigError({"unknown model id '" + id + "'"});
}

Zoo subset(const Zoo& zoo, const std::vector<std::string>& ids) {
    if (ids.empty()) return zoo;
    Zoo out;
    for (const auto& id : ids) out.push_back(find_model(zoo, id));
    return out;
}

int cmd_train(const RunConfig& cfg) {
    log("generating dataset");
    Dataset data = generate_dataset(cfg.dataset);
    save_file(cfg.dataset_path(), data);
    nlohmann::json models = nlohmann::json::array();
    for (const auto& arch_name : cfg.archs) {
        ArchSpec arch = arch_preset(arch_name, data.image_shape, data.classes);
        for (std::size_t i = 0; i < cfg.replicas; ++i) {
            const std::string id = arch_name + "-" + std::to_string(i);
            TrainConfig tc = cfg.train;
            tc.seed = cfg.replica_seed(i);
            log("training " + id);
            TrainResult r = train(arch, data, tc);
            save_file(cfg.model_path(id), r.net);
            models.push_back({{"id", id},
                              {"arch", arch.layers},
                              {"train_seed", tc.seed},
                              {"epoch_losses", r.epoch_losses},
                              {"train_accuracy", r.train_accuracy},
                              {"test_accuracy", r.test_accuracy},
                              {"fingerprint", fingerprint(r.net)}});
            std::printf("%s: train accuracy %.4f, test accuracy %.4f\n", id.c_str(), r.train_accuracy,
                        r.test_accuracy);
        }
    }
    write_json(cfg.output_dir / "train.json", {{"schema", kReportSchema},
                                              {"kind", "train"},
                                              {"dataset", fingerprint(data)},
                                              {"train_examples", data.train.size()},
                                              {"test_examples", data.test.size()},
                                              {"models", models}});
    return kOk;
}

int cmd_attack(const RunConfig& cfg) {
    AttackConfig ac = cfg.attack_config();
    Dataset data = load_dataset_file(cfg.dataset_path());
    Network net = load_network_file(cfg.model_path(cfg.attack_surrogate));
    Batch clean = eval_subset(data, ac.seed, cfg.harness.eval_size);
    log("attacking " + cfg.attack_surrogate + " with " + cfg.attack_method + " on " +
        std::to_string(clean.size()) + " examples");
    AdvResult adv = run_attack(net, clean, ac);

    const std::string stem = cfg.attack_surrogate + "_" + cfg.attack_method;
    Container c;
    c.kind = "adversarial";
    c.attributes = {{"method", cfg.attack_method},
                    {"surrogate", cfg.attack_surrogate},
                    {"epsilon", format_real(ac.epsilon)},
                    {"surrogate_fingerprint", fingerprint(net)},
                    {"dataset_fingerprint", fingerprint(data)}};
    c.tensors = {{"images", adv.adversarial}, {"clean", clean.images}, {"labels", labels_tensor(clean.labels)}};
    write_file(cfg.output_dir / "attack" / (stem + ".mupc"), encode(c));

    std::size_t fooled = 0;
    for (auto f : adv.white_box) fooled += f;
    const Real rate = clean.size() ? static_cast<Real>(fooled) / static_cast<Real>(clean.size()) : 0;
    write_json(cfg.output_dir / "attack" / (stem + ".json"), {{"schema", kReportSchema},
                                                              {"kind", "attack"},
                                                              {"surrogate", cfg.attack_surrogate},
                                                              {"method", cfg.attack_method},
                                                              {"config", to_json(ac)},
                                                              {"examples", clean.size()},
                                                              {"white_box_rate", rate},
                                                              {"white_box", adv.white_box},
                                                              {"loss_trace", adv.loss_trace},
                                                              {"threshold_trace", adv.threshold_trace}});
    std::printf("%s on %s: white-box success %.4f over %zu examples\n", cfg.attack_method.c_str(),
                cfg.attack_surrogate.c_str(), rate, clean.size());
    return kOk;
}

int cmd_eval(const RunConfig& cfg) {
    Dataset data = load_dataset_file(cfg.dataset_path());
    Zoo zoo = load_zoo(cfg);
    log("transfer matrix");
    TransferReport r = transfer_matrix(zoo, data, cfg.methods, cfg.harness, cfg.surrogates, cfg.victims);
    write_json(cfg.output_dir / "transfer.json", to_json(r));
    write_text(cfg.output_dir / "transfer.csv", to_csv(r));
    for (const auto& s : r.surrogates)
        for (const auto& m : r.methods)
            std::printf("%-8s %-12s transfer %.4f\n", s.c_str(), m.c_str(), r.transfer_average(s, m));
    return kOk;
}

int cmd_sweep(const RunConfig& cfg) {
    Dataset data = load_dataset_file(cfg.dataset_path());
    Zoo zoo = load_zoo(cfg);
    Zoo victims = subset(zoo, cfg.victims);
    nlohmann::json curves = nlohmann::json::array();
    std::string csv;
    for (const auto& s : subset(zoo, cfg.surrogates)) {
        log("sweep on " + s.id);
        SweepCurve c = ratio_sweep(s, victims, data, cfg.sweep_method, cfg.sweep_ratios, cfg.harness);
        curves.push_back(to_json(c));
        std::string part = to_csv(c);
        csv += csv.empty() ? part : part.substr(part.find('\n') + 1);
        for (const auto& p : c.points) std::printf("%-8s r=%-5s %.4f\n", s.id.c_str(), format_real(p.ratio).c_str(), p.mean_rate);
    }
    write_json(cfg.output_dir / "sweep.json", {{"schema", kReportSchema}, {"kind", "sweep_set"}, {"curves", curves}});
    write_text(cfg.output_dir / "sweep.csv", csv);
    return kOk;
}

int cmd_ablate(const RunConfig& cfg) {
    Dataset data = load_dataset_file(cfg.dataset_path());
    Zoo zoo = load_zoo(cfg);
    Zoo victims = subset(zoo, cfg.victims);
    nlohmann::json reports = nlohmann::json::array();
    std::string csv;
    for (const auto& s : subset(zoo, cfg.surrogates)) {
        log("ablation on " + s.id);
        AblationReport r = metric_ablation(s, victims, data, cfg.ablation_base, cfg.harness);
        reports.push_back(to_json(r));
        std::string part = to_csv(r);
        csv += csv.empty() ? part : part.substr(part.find('\n') + 1);
        for (const auto& row : r.rows) std::printf("%-8s %-14s %.4f\n", s.id.c_str(), row.method.c_str(), row.mean_rate);
    }
    write_json(cfg.output_dir / "ablation.json",
               {{"schema", kReportSchema}, {"kind", "ablation_set"}, {"reports", reports}});
    write_text(cfg.output_dir / "ablation.csv", csv);
    return kOk;
}

/// Re-checks an adversarial container without the attack code: every pixel
/// lies in [0, 255] and within epsilon of its clean value.
int cmd_verify(const std::string& path, double eps_override) {
    Container c = decode(read_file(path));
    if (c.kind != "adversarial")
        throw ContainerError(ContainerErrc::wrong_kind, "expected an adversarial container, found '" + c.kind + "'");
    const Tensor& x = c.require_tensor("images");
    const Tensor& x0 = c.require_tensor("clean");
    if (x.shape() != x0.shape()) throw ContainerError(ContainerErrc::malformed, "images and clean differ in shape");
    double eps = eps_override;
    if (std::isnan(eps)) {
        const std::string& text = c.require_attribute("epsilon");
        eps = std::stod(text);
    }
    std::size_t outside_ball = 0, outside_range = 0;
    double max_dev = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double d = std::fabs(x[i] - x0[i]);
        if (!(d <= eps)) ++outside_ball;
        if (!(x[i] >= 0.0 && x[i] <= 255.0)) ++outside_range;
        if (d > max_dev) max_dev = d;
    }
    std::printf("%s: %zu values, max |x - x0| = %.17g, eps = %.17g, outside ball %zu, outside [0,255] %zu\n",
                path.c_str(), x.size(), max_dev, eps, outside_ball, outside_range);
    if (outside_ball || outside_range) {
        std::printf("FAIL\n");
        return kVerifyFailed;
    }
    std::printf("OK\n");
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"mupctl: train surrogate models, craft transferable adversarial examples, evaluate transfer"};
    app.require_subcommand(1);
    std::string config_path, out_dir;
    double verify_eps = std::nan("");
    std::string verify_path;
    app.add_flag("-v,--verbose", g_verbose, "progress messages on stderr");

    struct Sub {
        const char* name;
        const char* help;
        int (*run)(const RunConfig&);
    };
    const Sub subs[] = {
        {"train", "generate the dataset and train every model", cmd_train},
        {"attack", "run one attack and write the adversarial container", cmd_attack},
        {"eval", "transfer matrix over the zoo", cmd_eval},
        {"sweep", "masking-ratio sweep per surrogate", cmd_sweep},
        {"ablate", "importance-metric ablation per surrogate", cmd_ablate},
    };
    std::vector<std::pair<CLI::App*, const Sub*>> commands;
    for (const Sub& s : subs) {
        CLI::App* sc = app.add_subcommand(s.name, s.help);
        sc->add_option("-c,--config", config_path, "INI run configuration")->required();
        sc->add_option("-o,--out", out_dir, "override [run] output_dir");
        commands.emplace_back(sc, &s);
    }
    CLI::App* verify = app.add_subcommand("verify", "re-check an adversarial container's epsilon-ball and range");
    verify->add_option("file", verify_path, "adversarial container")->required();
    verify->add_option("--epsilon", verify_eps, "bound to check (default: the container's own)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kUsage;
    }

    try {
        if (verify->parsed()) return cmd_verify(verify_path, verify_eps);
        for (auto& [sc, sub] : commands)
            if (sc->parsed()) {
                RunConfig cfg = load_config(config_path, out_dir);
                log(std::string("kernels: ") + std::string(to_string(kernels::active().isa)));
                return sub->run(cfg);
            }
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return kConfig;
    } catch (const IoError& e) {
        std::fprintf(stderr, "I/O error: %s\n", e.what());
        return kIo;
    } catch (const ContainerError& e) {
        std::fprintf(stderr, "I/O error: %s (%s)\n", e.what(), std::string(to_string(e.code())).c_str());
        return kIo;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "compute error: %s\n", e.what());
        return kCompute;
    }
    return kUsage;
}
