// Acceptance suite: one PASS/FAIL line per criterion.
//
// Usage: acceptance [--xfail=N,M] [--only=N,M] [--report=path]
//   --xfail  criteria that are known not to hold at desk scale; they still
//            print FAIL but do not affect the exit status (an unexpected pass
//            is reported as XPASS)
//   --only   run a subset
//   --report also write the lines to a file

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>
#include <string>

#include "mup/harness.hpp"
#include "mup/importance.hpp"
#include "mup/run_config.hpp"

using namespace mup;
namespace fs = std::filesystem;

namespace {

// Pinned tolerances.
constexpr Real kGradRelTol = 1e-4;       // criterion 1
constexpr Real kGradFloor = 1e-6;        //   absolute floor of the relative-error denominator
constexpr double kGradSeconds = 60;      //   runtime bound
constexpr double kMaskSeconds = 10;      // criterion 2
constexpr Real kWhiteBoxGap = 0.05;      // criterion 5
constexpr Real kSpearmanMin = 0.8;       // criterion 9
constexpr std::size_t kFidelityTop = 1000;
constexpr std::size_t kFidelityBatch = 64;
constexpr double kFidelitySeconds = 120;

struct Outcome {
    bool pass = false;
    std::string detail;
};

using Clock = std::chrono::steady_clock;
double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

Real rel_error(Real a, Real b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), kGradFloor}); }

Real mean(const std::vector<Real>& v) {
    return v.empty() ? 0 : std::accumulate(v.begin(), v.end(), Real(0)) / static_cast<Real>(v.size());
}

Real sample_sd(const std::vector<Real>& v) {
    if (v.size() < 2) return 0;
    const Real m = mean(v);
    Real s = 0;
    for (Real x : v) s += (x - m) * (x - m);
    return std::sqrt(s / static_cast<Real>(v.size() - 1));
}

std::string effect(const std::vector<Real>& diffs) {
    const Real m = mean(diffs), sd = sample_sd(diffs);
    std::string s = "mean " + fmt("%+.4f", m) + ", sd " + fmt("%.4f", sd);
    if (sd > 0) s += ", t " + fmt("%.2f", m / (sd / std::sqrt(static_cast<Real>(diffs.size()))));
    return s;
}

// Shared desk-scale state, built on first use.
struct Desk {
    RunConfig cfg;
    Dataset data;
    Zoo zoo;
};

const Desk& desk() {
    static const Desk d = [] {
        Desk d;
        d.cfg = load_run_config(fs::path(MUP_SOURCE_DIR) / "configs" / "desk.ini");
        d.data = generate_dataset(d.cfg.dataset);
        std::vector<std::uint64_t> seeds;
        for (std::size_t i = 0; i < d.cfg.replicas; ++i) seeds.push_back(d.cfg.replica_seed(i));
        d.zoo = train_zoo(d.data, d.cfg.archs, seeds, d.cfg.train);
        return d;
    }();
    return d;
}

Network random_net(Rng& rng, Shape input, const std::string& layers, Real scale) {
    Network net(std::move(input), parse_layers(layers));
    for (Real& p : net.params()) p = rng.uniform(-scale, scale);
    return net;
}

Batch random_batch(Rng& rng, const Network& net, std::size_t n) {
    Shape s{n};
    for (auto d : net.input_shape()) s.push_back(d);
    Tensor x(s);
    for (Real& v : x.data()) v = rng.uniform(0, 255);
    std::vector<std::size_t> y(n);
    for (auto& l : y) l = rng.below(net.num_classes());
    return {std::move(x), std::move(y)};
}

// 1 --------------------------------------------------------------------------
Outcome gradient_oracle() {
    const auto t0 = Clock::now();
    const std::vector<std::pair<Shape, std::string>> nets{
        {{1, 6, 6}, "flatten dense(12) relu dense(5)"},
        {{1, 6, 6}, "conv(3,3,same) relu flatten dense(4)"},
        {{2, 7, 7}, "conv(4,3,valid) relu conv(3,3,same) relu flatten dense(6) relu dense(3)"},
        {{1, 8, 8}, "conv(2,5,same) relu flatten dense(10) relu dense(10) relu dense(4)"},
        {{3, 5, 5}, "conv(5,1,valid) relu flatten dense(7)"},
    };
    Rng rng(20240101);
    Real worst = 0;
    std::size_t coords = 0;
    for (std::size_t k = 0; k < nets.size(); ++k) {
        Network net = random_net(rng, nets[k].first, nets[k].second, 0.3);
        Batch b = random_batch(rng, net, 3);
        GradPair g = backward(net, b);
        for (int j = 0; j < 120; ++j) {
            const std::size_t i = rng.below(g.grad_input.size());
            const Real fd = fd_gradient(net, b, {Coordinate::Kind::input, i}, 1e-3);
            worst = std::max(worst, rel_error(g.grad_input[i], fd));
            ++coords;
        }
        for (int j = 0; j < 120; ++j) {
            const std::size_t i = rng.below(net.param_count());
            const Real fd = fd_gradient(net, b, {Coordinate::Kind::param, i}, 1e-5);
            worst = std::max(worst, rel_error(g.grad_params[i], fd));
            ++coords;
        }
    }
    const double sec = seconds_since(t0);
    return {worst < kGradRelTol && sec < kGradSeconds,
            std::to_string(coords) + " coordinates over 5 nets, max rel err " + fmt("%.2e", worst) + " (tol " +
                fmt("%.0e", kGradRelTol) + "), " + fmt("%.1f", sec) + " s"};
}

// 2 --------------------------------------------------------------------------
Outcome mask_exactness() {
    const auto t0 = Clock::now();
    Rng rng(77);
    bool ok = true;
    std::size_t cases = 0;
    for (std::size_t P : {1, 2, 7, 100, 1000, 12345, 100000}) {
        for (int variant = 0; variant < 3; ++variant) {
            std::vector<Real> v(P);
            for (Real& x : v) {
                if (variant == 0) x = rng.uniform();
                if (variant == 1) x = static_cast<Real>(rng.below(5));  // heavy ties
                if (variant == 2) x = rng.below(3) == 0 ? 0 : rng.uniform();
            }
            ImportanceScores scores{v, Metric::taylor};
            // full-sort oracle: ascending value, then ascending index
            std::vector<std::size_t> order(P);
            std::iota(order.begin(), order.end(), 0);
            std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
                return v[a] < v[b] || (v[a] == v[b] && a < b);
            });
            for (int i = 0; i <= 10; ++i) {
                const Real r = 0.05 * i;
                const std::size_t k = static_cast<std::size_t>(std::floor(r * static_cast<Real>(P)));
                std::vector<std::uint8_t> want(P, 1);
                for (std::size_t j = 0; j < k; ++j) want[order[j]] = 0;
                ParamMask m = build_mask(scores, r);
                const auto zeros = static_cast<std::size_t>(std::count(m.bits.begin(), m.bits.end(), 0));
                ok = ok && zeros == k && m.zeros == k && m.bits == want;
                ++cases;
            }
        }
    }
    const double sec = seconds_since(t0);
    return {ok && sec < kMaskSeconds, std::to_string(cases) + " (P, r) cases incl. heavy ties, P up to 1e5, " +
                                          fmt("%.2f", sec) + " s"};
}

// 3 --------------------------------------------------------------------------
Outcome reduction_identities() {
    const Desk& d = desk();
    const Network& net = d.zoo.front().net;
    Batch b = eval_subset(d.data, 99, 20);
    for (Real& x : b.images.data()) x = std::round(x);  // 8-bit pixels, so x +- eps is exact
    std::vector<std::string> failed;

    // MIM with N=1, mu=0, beta=eps against the FGSM formula
    AttackConfig mim;
    mim.iterations = 1;
    mim.mu = 0;
    mim.beta = mim.epsilon;
    Tensor adv = run_attack(net, b, mim).adversarial;
    bool fgsm_ok = true;
    for (std::size_t e = 0; e < b.size(); ++e) {
        Batch one{b.images.rows(e, 1), {b.labels[e]}};
        Tensor g = backward(net, one).grad_input;
        for (std::size_t i = 0; i < g.size(); ++i) {
            const Real s = g[i] > 0 ? 1 : (g[i] < 0 ? -1 : 0);
            const Real want = std::clamp(one.images[i] + mim.epsilon * s, Real(0), Real(255));
            fgsm_ok = fgsm_ok && adv.row(e)[i] == want;
        }
    }
    if (!fgsm_ok) failed.push_back("fgsm");

    // MUP(r=0) against the unmasked baseline
    for (const char* base : {"mim", "sim", "taigr"}) {
        AttackConfig plain = apply_method(base, AttackConfig{});
        plain.iterations = 4;
        plain.seed = 5;
        for (const char* prefix : {"mup-", "mupabs-"}) {
            AttackConfig masked = apply_method(std::string(prefix) + base, plain);
            masked.ratio = 0;
            if (!bitwise_equal(run_attack(net, b, plain).adversarial, run_attack(net, b, masked).adversarial))
                failed.push_back(std::string(prefix) + base + "(r=0)");
        }
    }

    // SIM(m=1) and TAIG-R(S=1, u = 0) against the plain gradient
    Batch one{b.images.rows(0, 1), {b.labels[0]}};
    Tensor g = backward(net, one).grad_input;
    AttackConfig sim = apply_method("sim", AttackConfig{});
    sim.sim_copies = 1;
    if (!bitwise_equal(inner_gradient(net, one, sim), g)) failed.push_back("sim(m=1)");
    AttackConfig taig = apply_method("taigr", AttackConfig{});
    taig.taig_samples = 1;
    UniformSource zero = [](std::span<Real> out, Real, Real) { std::fill(out.begin(), out.end(), 0.0); };
    if (!bitwise_equal(inner_gradient(net, one, taig, {}, zero), g)) failed.push_back("taigr(S=1,u=0)");

    std::string detail = "fgsm, mup/mupabs(r=0) x {mim,sim,taigr}, sim(m=1), taigr(S=1,u=0)";
    for (const auto& f : failed) detail += " [differs: " + f + "]";
    return {failed.empty(), detail + ", bitwise"};
}

// 4 --------------------------------------------------------------------------
Outcome epsilon_ball() {
    const Desk& d = desk();
    const fs::path dir = fs::path(MUP_BINARY_DIR) / "acceptance_adv";
    fs::remove_all(dir);
    const std::vector<std::string> methods{"fgsm",      "ifgsm",      "mim",          "sim",          "taigr",
                                           "mup-mim",   "mup-sim",    "mup-taigr",    "mupabs-mim",   "mupabs-sim",
                                           "mupabs-taigr", "gn-mim",  "gn-sim",       "gn-taigr"};
    std::size_t batches = 0, checker_failures = 0;
    Real worst = 0;
    bool range_ok = true;
    for (const ZooModel& s : d.zoo) {
        Batch clean = eval_subset(d.data, 3, 12);
        for (const auto& m : methods) {
            AttackConfig ac = d.cfg.harness.method(m, 11);
            AdvResult adv = run_attack(s.net, clean, ac);
            for (std::size_t i = 0; i < clean.images.size(); ++i) {
                worst = std::max(worst, std::abs(adv.adversarial[i] - clean.images[i]));
                range_ok = range_ok && adv.adversarial[i] >= 0 && adv.adversarial[i] <= 255;
            }
            Container c;
            c.kind = "adversarial";
            c.attributes = {{"epsilon", "16"}, {"method", m}, {"surrogate", s.id}};
            c.tensors = {{"images", adv.adversarial}, {"clean", clean.images}, {"labels", labels_tensor(clean.labels)}};
            const fs::path file = dir / (s.id + "_" + m + ".mupc");
            write_file(file, encode(c));
            const std::string cmd = std::string("\"") + MUP_CLI_PATH + "\" verify \"" + file.string() + "\" > /dev/null";
            if (std::system(cmd.c_str()) != 0) ++checker_failures;
            ++batches;
        }
    }
    return {worst <= 16 && range_ok && checker_failures == 0,
            std::to_string(batches) + " batches (" + std::to_string(methods.size()) +
                " methods x " + std::to_string(d.zoo.size()) + " surrogates), max |x_N - x| = " +
                fmt("%.17g", worst) + ", independent checker failures " + std::to_string(checker_failures)};
}

// 5 --------------------------------------------------------------------------
Outcome white_box_ordering() {
    const Desk& d = desk();
    TransferReport r = transfer_matrix(d.zoo, d.data, {"fgsm", "ifgsm"}, d.cfg.harness);
    bool ok = true;
    std::string detail;
    for (const auto& s : r.surrogates) {
        const Real f = r.mean_rate(s, s, "fgsm"), i = r.mean_rate(s, s, "ifgsm");
        ok = ok && i >= f + kWhiteBoxGap;
        detail += s + " " + fmt("%.3f", f) + "->" + fmt("%.3f", i) + "; ";
    }
    return {ok, "white-box FGSM->I-FGSM: " + detail + "need gap >= " + fmt("%.2f", kWhiteBoxGap)};
}

// 6 --------------------------------------------------------------------------
Outcome transfer_gain() {
    const Desk& d = desk();
    TransferReport r = transfer_matrix(d.zoo, d.data, {"mim", "mup-mim", "taigr", "mup-taigr"}, d.cfg.harness);
    write_text(fs::path(MUP_BINARY_DIR) / "acceptance_transfer.json", to_json(r).dump(2) + "\n");
    auto diffs = [&](const std::string& masked, const std::string& base) {
        std::vector<Real> out;
        for (std::uint64_t seed : d.cfg.harness.seeds) {
            std::vector<Real> per_surrogate;
            for (const auto& s : r.surrogates)
                per_surrogate.push_back(r.transfer_average(s, masked, seed) - r.transfer_average(s, base, seed));
            out.push_back(mean(per_surrogate));
        }
        return out;
    };
    const auto dm = diffs("mup-mim", "mim"), dt = diffs("mup-taigr", "taigr");
    return {mean(dm) > 0 && mean(dt) > 0,
            "MUP-MIM - MIM: " + effect(dm) + "; MUP-TAIG-R - TAIG-R: " + effect(dt) + " (" +
                std::to_string(dm.size()) + " paired seeds)"};
}

// 7 --------------------------------------------------------------------------
Outcome sweep_shape() {
    const Desk& d = desk();
    bool ok = true;
    std::string detail;
    nlohmann::json curves = nlohmann::json::array();
    for (const ZooModel& s : d.zoo) {
        SweepCurve c = ratio_sweep(s, d.zoo, d.data, d.cfg.sweep_method, d.cfg.sweep_ratios, d.cfg.harness);
        curves.push_back(to_json(c));
        const Real r0 = c.points.front().mean_rate, r_end = c.points.back().mean_rate;
        Real interior = -1, arg = 0;
        for (std::size_t i = 1; i + 1 < c.points.size(); ++i)
            if (c.points[i].mean_rate > interior) interior = c.points[i].mean_rate, arg = c.points[i].ratio;
        const bool rises = interior > r0, falls = r_end < interior;
        ok = ok && rises && falls;
        detail += s.id + " r0 " + fmt("%.3f", r0) + ", max " + fmt("%.3f", interior) + "@" + fmt("%.2f", arg) +
                  ", r.5 " + fmt("%.3f", r_end) + (rises ? "" : " [no rise]") + (falls ? "" : " [no fall]") + "; ";
    }
    write_text(fs::path(MUP_BINARY_DIR) / "acceptance_sweep.json", curves.dump(2) + "\n");
    return {ok, detail};
}

// 8 --------------------------------------------------------------------------
Outcome metric_ordering() {
    const Desk& d = desk();
    std::vector<Real> diffs;
    std::string detail;
    nlohmann::json reports = nlohmann::json::array();
    for (const ZooModel& s : d.zoo) {
        AblationReport r = metric_ablation(s, d.zoo, d.data, d.cfg.ablation_base, d.cfg.harness);
        reports.push_back(to_json(r));
        for (std::size_t k = 0; k < r.rows[1].per_seed.size(); ++k)
            diffs.push_back(r.rows[1].per_seed[k] - r.rows[2].per_seed[k]);
        detail += s.id + " " + fmt("%.3f", r.rows[0].mean_rate) + "/" + fmt("%.3f", r.rows[1].mean_rate) + "/" +
                  fmt("%.3f", r.rows[2].mean_rate) + "; ";
    }
    write_text(fs::path(MUP_BINARY_DIR) / "acceptance_ablation.json", reports.dump(2) + "\n");
    return {mean(diffs) >= 0, "none/taylor/magnitude at r=" +
                                  fmt("%.2f", d.cfg.harness.ratios.at(InnerGradient::taigr)) + ": " + detail +
                                  "taylor - magnitude " + effect(diffs)};
}

// 9 --------------------------------------------------------------------------
std::vector<Real> average_ranks(const std::vector<Real>& v) {
    std::vector<std::size_t> idx(v.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::vector<Real> r(v.size());
    for (std::size_t i = 0; i < idx.size();) {
        std::size_t j = i;
        while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
        for (std::size_t k = i; k <= j; ++k) r[idx[k]] = 0.5 * static_cast<Real>(i + j);
        i = j + 1;
    }
    return r;
}

Real spearman(const std::vector<Real>& a, const std::vector<Real>& b) {
    const auto ra = average_ranks(a), rb = average_ranks(b);
    const Real ma = mean(ra), mb = mean(rb);
    Real sab = 0, saa = 0, sbb = 0;
    for (std::size_t i = 0; i < ra.size(); ++i) {
        sab += (ra[i] - ma) * (rb[i] - mb);
        saa += (ra[i] - ma) * (ra[i] - ma);
        sbb += (rb[i] - mb) * (rb[i] - mb);
    }
    return sab / std::sqrt(saa * sbb);
}

Outcome taylor_fidelity() {
    const auto t0 = Clock::now();
    const Desk& d = desk();
    const ZooModel* small = nullptr;
    for (const auto& m : d.zoo)
        if (!small || m.net.param_count() < small->net.param_count()) small = &m;
    std::vector<std::size_t> rows(kFidelityBatch);
    std::iota(rows.begin(), rows.end(), 0);
    Batch b = select(d.data.test, rows);
    const auto V = taylor_scores(small->net, b).values;
    auto p = small->net.params();
    std::vector<std::size_t> idx(p.size());
    std::iota(idx.begin(), idx.end(), 0);
    const std::size_t top = std::min(kFidelityTop, p.size());
    std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(top), idx.end(),
                      [&](std::size_t a, std::size_t c) {
                          return std::abs(p[a]) > std::abs(p[c]) || (std::abs(p[a]) == std::abs(p[c]) && a < c);
                      });
    const Real base = loss(small->net, b);
    std::vector<Real> v, exact;
    Network probe = small->net;
    for (std::size_t k = 0; k < top; ++k) {
        const std::size_t i = idx[k];
        const Real keep = probe.params()[i];
        probe.params()[i] = 0;
        exact.push_back(std::abs(loss(probe, b) - base));
        probe.params()[i] = keep;
        v.push_back(V[i]);
    }
    const Real rho = spearman(v, exact);
    const double sec = seconds_since(t0);
    return {rho >= kSpearmanMin && sec < kFidelitySeconds,
            small->id + " (" + std::to_string(p.size()) + " params), top " + std::to_string(top) +
                " |theta|, batch " + std::to_string(kFidelityBatch) + ": Spearman " + fmt("%.4f", rho) + " (min " +
                fmt("%.1f", kSpearmanMin) + "), " + fmt("%.1f", sec) + " s"};
}

// 10 -------------------------------------------------------------------------
std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

Outcome determinism() {
    const fs::path root = fs::path(MUP_BINARY_DIR) / "acceptance_determinism";
    fs::remove_all(root);
    const std::string config = (fs::path(MUP_SOURCE_DIR) / "configs" / "smoke.ini").string();
    for (const char* run : {"a", "b"})
        for (const char* cmd : {"train", "attack", "eval", "sweep", "ablate"}) {
            const std::string line = std::string("\"") + MUP_CLI_PATH + "\" " + cmd + " -c \"" + config + "\" -o \"" +
                                     (root / run).string() + "\" > /dev/null";
            if (std::system(line.c_str()) != 0) return {false, std::string("mupctl ") + cmd + " failed"};
        }
    std::size_t files = 0, differing = 0;
    for (const auto& e : fs::recursive_directory_iterator(root / "a")) {
        if (!e.is_regular_file()) continue;
        const fs::path other = root / "b" / fs::relative(e.path(), root / "a");
        ++files;
        if (!fs::exists(other) || slurp(e.path()) != slurp(other)) ++differing;
    }
    return {files > 0 && differing == 0,
            "configs/smoke.ini run twice through train/attack/eval/sweep/ablate: " + std::to_string(files) +
                " files, " + std::to_string(differing) + " differ"};
}

std::set<int> parse_ids(const std::string& s) {
    std::set<int> out;
    std::stringstream in(s);
    std::string tok;
    while (std::getline(in, tok, ','))
        if (!tok.empty()) out.insert(std::stoi(tok));
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    std::set<int> xfail, only;
    std::string report_path;
    for (int i = 1; i < argc; ++i) {
        std::string a = argv[i];
        if (a.rfind("--xfail=", 0) == 0) xfail = parse_ids(a.substr(8));
        else if (a.rfind("--only=", 0) == 0) only = parse_ids(a.substr(7));
        else if (a.rfind("--report=", 0) == 0) report_path = a.substr(9);
        else {
            std::fprintf(stderr, "unknown argument %s\n", a.c_str());
            return 2;
        }
    }

    const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
        {"gradient oracle", gradient_oracle},
        {"mask exactness", mask_exactness},
        {"reduction identities", reduction_identities},
        {"epsilon-ball and range", epsilon_ball},
        {"white-box ordering", white_box_ordering},
        {"directional transfer gain", transfer_gain},
        {"sweep shape", sweep_shape},
        {"metric ablation", metric_ordering},
        {"taylor fidelity", taylor_fidelity},
        {"determinism", determinism},
    };

    std::ostringstream out;
    int unexpected = 0;
    for (std::size_t k = 0; k < criteria.size(); ++k) {
        const int id = static_cast<int>(k + 1);
        if (!only.empty() && !only.count(id)) continue;
        Outcome o;
        try {
            o = criteria[k].second();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        const bool expected_red = xfail.count(id) > 0;
        const char* tag = o.pass ? (expected_red ? "XPASS" : "PASS") : (expected_red ? "FAIL (expected)" : "FAIL");
        if (!o.pass && !expected_red) ++unexpected;
        char head[96];
        std::snprintf(head, sizeof head, "[%s] %2d %s: ", tag, id, criteria[k].first);
        const std::string line = head + o.detail;
        std::printf("%s\n", line.c_str());
        std::fflush(stdout);
        out << line << '\n';
    }
    if (!report_path.empty()) write_text(report_path, out.str());
    return unexpected == 0 ? 0 : 1;
}
