#include "mup/harness.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numeric>
#include <set>
#include <sstream>

#include "mup/container.hpp"

namespace mup {

namespace {

Real mean(std::span<const Real> v) {
    if (v.empty()) return 0;
    Real s = 0;
    for (Real x : v) s += x;
    return s / static_cast<Real>(v.size());
}

std::string fooled_string(const std::vector<std::uint8_t>& fooled) {
    std::string s(fooled.size(), '0');
    for (std::size_t i = 0; i < fooled.size(); ++i)
        if (fooled[i]) s[i] = '1';
    return s;
}

std::map<std::string, std::string> fingerprints_of(const std::vector<const ZooModel*>& models, const Dataset& data) {
    std::map<std::string, std::string> f;
    f["dataset"] = fingerprint(data);
    for (const ZooModel* m : models) f[m->id] = fingerprint(m->net);
    return f;
}

std::vector<const ZooModel*> victims_of(const ZooModel& surrogate, const Zoo& zoo) {
    std::vector<const ZooModel*> v;
    for (const ZooModel& m : zoo)
        if (m.id != surrogate.id) v.push_back(&m);
    if (v.empty()) throw ConfigError({"victim list is empty"});
    return v;
}

void check_config(const HarnessConfig& cfg) {
    auto p = cfg.problems();
    if (!p.empty()) throw ConfigError(std::move(p));
}

/// Mean transfer rate over `victims` for every seed, with the attack
/// configured by `ac` (seed overridden per run).
std::vector<std::vector<SuccessRate>> attack_and_score(const ZooModel& surrogate,
                                                       const std::vector<const ZooModel*>& victims,
                                                       const Dataset& data, AttackConfig ac,
                                                       const HarnessConfig& cfg) {
    std::vector<std::vector<SuccessRate>> out;
    for (std::uint64_t seed : cfg.seeds) {
        Batch clean = eval_subset(data, seed, cfg.eval_size);
        ac.seed = seed;
        AdvResult adv = run_attack(surrogate.net, clean, ac);
        std::vector<SuccessRate> row;
        for (const ZooModel* v : victims) row.push_back(evaluate_success(v->net, clean, adv.adversarial));
        out.push_back(std::move(row));
    }
    return out;
}

Real victim_mean(const std::vector<SuccessRate>& row) {
    std::vector<Real> r;
    for (const auto& s : row) r.push_back(s.rate);
    return mean(r);
}

}  // namespace

Zoo train_zoo(const Dataset& data, const std::vector<std::string>& archs,
              const std::vector<std::uint64_t>& replica_seeds, const TrainConfig& base) {
    Zoo zoo;
    for (const std::string& a : archs) {
        ArchSpec arch = arch_preset(a, data.image_shape, data.classes);
        for (std::size_t i = 0; i < replica_seeds.size(); ++i) {
            TrainConfig tc = base;
            tc.seed = replica_seeds[i];
            zoo.push_back({a + "-" + std::to_string(i), train(arch, data, tc).net});
        }
    }
    return zoo;
}

std::string fingerprint(const Network& net) { return hex32(crc32_of(save(net))); }
std::string fingerprint(const Dataset& data) { return hex32(crc32_of(save(data))); }

SuccessRate evaluate_success(const Network& victim, const Batch& clean, const Tensor& adversarial) {
    if (adversarial.shape() != clean.images.shape())
        throw ShapeError("evaluate_success: adversarial shape " + to_string(adversarial.shape()) +
                         " differs from clean shape " + to_string(clean.images.shape()));
    validate_batch(victim, clean);
    const std::size_t n = clean.size();
    auto clean_pred = predict(victim, clean.images);
    auto adv_pred = predict(victim, adversarial);
    SuccessRate s;
    s.examples = n;
    s.fooled.resize(n);
    std::size_t fooled = 0, correct = 0, fooled_correct = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const bool ok = clean_pred[i] == clean.labels[i];
        const bool f = adv_pred[i] != clean.labels[i];
        s.fooled[i] = f;
        fooled += f;
        correct += ok;
        fooled_correct += ok && f;
    }
    if (n > 0) {
        s.rate = static_cast<Real>(fooled) / static_cast<Real>(n);
        s.clean_accuracy = static_cast<Real>(correct) / static_cast<Real>(n);
    }
    if (correct > 0) s.rate_on_correct = static_cast<Real>(fooled_correct) / static_cast<Real>(correct);
    return s;
}

std::vector<std::string> HarnessConfig::problems() const {
    // the base settings are checked as a masked method would use them; each
    // method is validated again once applied
    std::vector<std::string> p = apply_method("mup-mim", attack).problems();
    for (const auto& [inner, r] : ratios)
        if (!(r >= 0 && r < 1))
            p.push_back("ratio for " + std::string(to_string(inner)) + " must satisfy 0 <= r < 1");
    if (seeds.empty()) p.push_back("at least one attack seed is required");
    if (std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size())
        p.push_back("attack seeds must be distinct");
    if (eval_size < 1) p.push_back("eval_size must be >= 1");
    if (!(accuracy_floor >= 0 && accuracy_floor <= 1)) p.push_back("accuracy_floor must be in [0, 1]");
    return p;
}

AttackConfig HarnessConfig::method(const std::string& name, std::uint64_t seed) const {
    AttackConfig ac = apply_method(name, attack);
    if (ac.masking == Masking::mup) {
        auto it = ratios.find(ac.inner);
        ac.ratio = it == ratios.end() ? Real(0) : it->second;
    }
    ac.seed = seed;
    ac.validate();
    return ac;
}

Batch eval_subset(const Dataset& data, std::uint64_t seed, std::size_t eval_size) {
    const std::size_t n = data.test.size();
    const std::size_t k = std::min(eval_size, n);
    std::vector<std::size_t> rows(n);
    std::iota(rows.begin(), rows.end(), 0);
    Rng rng(derive_seed(seed, {0xe7a1}));
    for (std::size_t i = 0; i < k; ++i) std::swap(rows[i], rows[i + rng.below(n - i)]);
    rows.resize(k);
    return select(data.test, rows);
}

void check_clean_accuracy(const Zoo& zoo, const Dataset& data, Real floor) {
    std::string failures;
    for (const ZooModel& m : zoo) {
        Real acc = accuracy(m.net, data.test);
        if (acc < floor) failures += "\n  " + m.id + ": clean test accuracy " + format_real(acc) + " < " + format_real(floor);
    }
    if (!failures.empty()) throw HarnessError("victim below the clean-accuracy floor:" + failures);
}

Real TransferReport::mean_rate(const std::string& surrogate, const std::string& victim,
                               const std::string& method) const {
    std::vector<Real> r;
    for (const auto& c : cells)
        if (c.surrogate == surrogate && c.victim == victim && c.method == method) r.push_back(c.success.rate);
    if (r.empty()) throw std::out_of_range("no cell for " + surrogate + "/" + victim + "/" + method);
    return mean(r);
}

Real TransferReport::transfer_average(const std::string& surrogate, const std::string& method,
                                      std::uint64_t seed) const {
    std::vector<Real> r;
    for (const auto& c : cells)
        if (c.surrogate == surrogate && c.method == method && c.seed == seed && !c.white_box) r.push_back(c.success.rate);
    if (r.empty()) throw std::out_of_range("no transfer cell for " + surrogate + "/" + method);
    return mean(r);
}

Real TransferReport::transfer_average(const std::string& surrogate, const std::string& method) const {
    std::vector<Real> r;
    std::set<std::uint64_t> seen;
    for (const auto& c : cells)
        if (c.surrogate == surrogate && c.method == method && seen.insert(c.seed).second)
            r.push_back(transfer_average(surrogate, method, c.seed));
    if (r.empty()) throw std::out_of_range("no transfer cell for " + surrogate + "/" + method);
    return mean(r);
}

TransferReport transfer_matrix(const Zoo& zoo, const Dataset& data, const std::vector<std::string>& methods,
                               const HarnessConfig& cfg, const std::vector<std::string>& surrogates,
                               const std::vector<std::string>& victims) {
    if (zoo.size() < 2) throw ConfigError({"transfer evaluation needs at least two models"});
    if (methods.empty()) throw ConfigError({"method list is empty"});
    check_config(cfg);
    for (const auto& m : methods) cfg.method(m, 0);
    auto pick = [&](const std::vector<std::string>& ids, const char* what) {
        std::vector<const ZooModel*> out;
        for (const ZooModel& m : zoo)
            if (ids.empty() || std::find(ids.begin(), ids.end(), m.id) != ids.end()) out.push_back(&m);
        if (out.size() != (ids.empty() ? zoo.size() : ids.size()))
            throw ConfigError({std::string(what) + " list names a model that is not in the zoo"});
        return out;
    };
    const auto ss = pick(surrogates, "surrogate");
    const auto vs = pick(victims, "victim");
    for (const ZooModel* s : ss)
        if (std::none_of(vs.begin(), vs.end(), [&](const ZooModel* v) { return v->id != s->id; }))
            throw ConfigError({"surrogate " + s->id + " has no victim other than itself"});
    Zoo used;
    for (const ZooModel& m : zoo)
        if (std::find(ss.begin(), ss.end(), &m) != ss.end() || std::find(vs.begin(), vs.end(), &m) != vs.end())
            used.push_back(m);
    check_clean_accuracy(used, data, cfg.accuracy_floor);

    TransferReport rep;
    for (const auto& m : used) rep.models.push_back(m.id);
    rep.methods = methods;
    for (const auto& m : methods) rep.ratios.push_back(cfg.method(m, 0).ratio);
    rep.config = to_json(cfg);
    std::vector<const ZooModel*> all;
    for (const auto& m : used) all.push_back(&m);
    rep.fingerprints = fingerprints_of(all, data);

    for (const ZooModel* s : ss) {
        rep.surrogates.push_back(s->id);
        for (const std::string& method : methods)
            for (std::uint64_t seed : cfg.seeds) {
                Batch clean = eval_subset(data, seed, cfg.eval_size);
                AdvResult adv = run_attack(s->net, clean, cfg.method(method, seed));
                for (const ZooModel* v : vs)
                    rep.cells.push_back({s->id, v->id, method, seed, s->id == v->id,
                                         evaluate_success(v->net, clean, adv.adversarial)});
            }
    }
    for (const ZooModel* v : vs) rep.victims.push_back(v->id);
    return rep;
}

SweepCurve ratio_sweep(const ZooModel& surrogate, const Zoo& victims, const Dataset& data, const std::string& method,
                       const std::vector<Real>& ratios, const HarnessConfig& cfg) {
    check_config(cfg);
    std::vector<std::string> problems;
    if (ratios.empty() || ratios.front() != 0) problems.push_back("ratio list must start at 0");
    for (std::size_t i = 1; i < ratios.size(); ++i)
        if (!(ratios[i] > ratios[i - 1])) problems.push_back("ratios must be strictly increasing");
    AttackConfig ac = apply_method(method, cfg.attack);
    ac.ratio = 0;
    if (ac.masking != Masking::mup) problems.push_back("sweep method must use mup masking: " + method);
    for (Real r : ratios) {
        ac.ratio = r;
        for (auto& p : ac.problems()) problems.push_back(p);
    }
    if (!problems.empty()) throw ConfigError(std::move(problems));
    auto vs = victims_of(surrogate, victims);
    Zoo everyone(1, surrogate);
    for (auto* v : vs) everyone.push_back(*v);
    check_clean_accuracy(everyone, data, cfg.accuracy_floor);

    SweepCurve curve;
    curve.surrogate = surrogate.id;
    curve.method = method;
    curve.config = to_json(cfg);
    std::vector<const ZooModel*> all{&surrogate};
    all.insert(all.end(), vs.begin(), vs.end());
    curve.fingerprints = fingerprints_of(all, data);

    for (Real r : ratios) {
        ac.ratio = r;
        auto runs = attack_and_score(surrogate, vs, data, ac, cfg);
        SweepPoint pt;
        pt.ratio = r;
        for (const auto& row : runs) pt.per_seed.push_back(victim_mean(row));
        for (std::size_t j = 0; j < vs.size(); ++j) {
            std::vector<Real> r_j;
            for (const auto& row : runs) r_j.push_back(row[j].rate);
            pt.per_victim[vs[j]->id] = mean(r_j);
        }
        pt.mean_rate = mean(pt.per_seed);
        curve.points.push_back(std::move(pt));
    }
    return curve;
}

AblationReport metric_ablation(const ZooModel& surrogate, const Zoo& victims, const Dataset& data,
                               const std::string& base, const HarnessConfig& cfg) {
    check_config(cfg);
    const std::vector<std::string> methods{base, "mup-" + base, "mupabs-" + base};
    for (const auto& m : methods) cfg.method(m, 0);
    if (apply_method(base, cfg.attack).masking != Masking::none)
        throw ConfigError({"ablation base must be an unmasked method: " + base});
    auto vs = victims_of(surrogate, victims);
    Zoo everyone(1, surrogate);
    for (auto* v : vs) everyone.push_back(*v);
    check_clean_accuracy(everyone, data, cfg.accuracy_floor);

    AblationReport rep;
    rep.surrogate = surrogate.id;
    rep.base = base;
    rep.ratio = cfg.method(methods[1], 0).ratio;
    std::vector<const ZooModel*> all{&surrogate};
    all.insert(all.end(), vs.begin(), vs.end());
    rep.fingerprints = fingerprints_of(all, data);
    for (const auto& m : methods) {
        AttackConfig ac = cfg.method(m, 0);
        auto runs = attack_and_score(surrogate, vs, data, ac, cfg);
        AblationRow row;
        row.method = m;
        for (const auto& r : runs) row.per_seed.push_back(victim_mean(r));
        row.mean_rate = mean(row.per_seed);
        row.config = to_json(ac);
        row.config.erase("seed");
        rep.rows.push_back(std::move(row));
    }
    return rep;
}

// Serialization ---------------------------------------------------------------

std::string format_real(Real v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

nlohmann::json to_json(const AttackConfig& c) {
    return {{"epsilon", c.epsilon},
            {"beta", c.beta},
            {"iterations", c.iterations},
            {"mu", c.mu},
            {"inner", std::string(to_string(c.inner))},
            {"sim_copies", c.sim_copies},
            {"taig_samples", c.taig_samples},
            {"masking", std::string(to_string(c.masking))},
            {"ratio", c.ratio},
            {"metric", std::string(to_string(c.metric))},
            {"mask_biases", c.mask_biases},
            {"drop_rate", c.drop_rate},
            {"seed", c.seed}};
}

nlohmann::json to_json(const HarnessConfig& c) {
    nlohmann::json a = to_json(c.attack);
    a.erase("seed");
    a.erase("ratio");
    a.erase("masking");
    a.erase("inner");
    a.erase("metric");
    nlohmann::json r = nlohmann::json::object();
    for (const auto& [inner, v] : c.ratios) r[std::string(to_string(inner))] = v;
    return {{"attack", a}, {"ratios", r}, {"seeds", c.seeds}, {"eval_size", c.eval_size}, {"accuracy_floor", c.accuracy_floor}};
}

nlohmann::json to_json(const TransferReport& r) {
    nlohmann::json cells = nlohmann::json::array();
    for (const auto& c : r.cells)
        cells.push_back({{"surrogate", c.surrogate},
                         {"victim", c.victim},
                         {"method", c.method},
                         {"seed", c.seed},
                         {"white_box", c.white_box},
                         {"examples", c.success.examples},
                         {"success_rate", c.success.rate},
                         {"success_rate_on_correct", c.success.rate_on_correct},
                         {"clean_accuracy", c.success.clean_accuracy},
                         {"fooled", fooled_string(c.success.fooled)}});
    nlohmann::json summary = nlohmann::json::array();
    for (const auto& s : r.surrogates)
        for (const auto& m : r.methods) {
            nlohmann::json victims = nlohmann::json::object();
            for (const auto& v : r.victims) victims[v] = r.mean_rate(s, v, m);
            nlohmann::json row{{"surrogate", s}, {"method", m}, {"transfer_average", r.transfer_average(s, m)},
                               {"victims", victims}};
            if (std::find(r.victims.begin(), r.victims.end(), s) != r.victims.end())
                row["white_box"] = r.mean_rate(s, s, m);
            summary.push_back(std::move(row));
        }
    return {{"schema", kReportSchema}, {"kind", "transfer"},     {"models", r.models},
            {"surrogates", r.surrogates}, {"victims", r.victims},
            {"methods", r.methods},    {"ratios", r.ratios},     {"config", r.config},     {"fingerprints", r.fingerprints},
            {"summary", summary},      {"cells", cells}};
}

nlohmann::json to_json(const SweepCurve& c) {
    nlohmann::json pts = nlohmann::json::array();
    for (const auto& p : c.points)
        pts.push_back({{"ratio", p.ratio}, {"mean_rate", p.mean_rate}, {"per_seed", p.per_seed},
                       {"per_victim", p.per_victim}});
    return {{"schema", kReportSchema}, {"kind", "sweep"},  {"surrogate", c.surrogate}, {"method", c.method},
            {"config", c.config},      {"fingerprints", c.fingerprints}, {"points", pts}};
}

nlohmann::json to_json(const AblationReport& r) {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& row : r.rows)
        rows.push_back({{"method", row.method}, {"mean_rate", row.mean_rate}, {"per_seed", row.per_seed},
                        {"config", row.config}});
    return {{"schema", kReportSchema}, {"kind", "ablation"}, {"surrogate", r.surrogate}, {"base", r.base},
            {"ratio", r.ratio},        {"fingerprints", r.fingerprints}, {"rows", rows}};
}

std::string to_csv(const TransferReport& r) {
    std::ostringstream o;
    o << "surrogate,victim,method,ratio,white_box,seeds,success_rate,success_rate_on_correct,clean_accuracy\n";
    const std::size_t seeds = r.config.value("seeds", nlohmann::json::array()).size();
    for (const auto& s : r.surrogates)
        for (std::size_t k = 0; k < r.methods.size(); ++k) {
            const std::string& m = r.methods[k];
            const Real ratio = r.ratios[k];
            for (const auto& v : r.victims) {
                std::vector<Real> oc, ca;
                for (const auto& c : r.cells)
                    if (c.surrogate == s && c.victim == v && c.method == m) {
                        oc.push_back(c.success.rate_on_correct);
                        ca.push_back(c.success.clean_accuracy);
                    }
                o << s << ',' << v << ',' << m << ',' << format_real(ratio) << ',' << (s == v ? 1 : 0) << ','
                  << seeds << ',' << format_real(r.mean_rate(s, v, m)) << ',' << format_real(mean(oc)) << ','
                  << format_real(mean(ca)) << '\n';
            }
        }
    return o.str();
}

std::string to_csv(const SweepCurve& c) {
    std::ostringstream o;
    o << "surrogate,victim,method,ratio,white_box,seeds,success_rate\n";
    for (const auto& p : c.points) {
        for (const auto& [v, rate] : p.per_victim)
            o << c.surrogate << ',' << v << ',' << c.method << ',' << format_real(p.ratio) << ",0,"
              << p.per_seed.size() << ',' << format_real(rate) << '\n';
        o << c.surrogate << ",mean," << c.method << ',' << format_real(p.ratio) << ",0," << p.per_seed.size() << ','
          << format_real(p.mean_rate) << '\n';
    }
    return o.str();
}

std::string to_csv(const AblationReport& r) {
    std::ostringstream o;
    o << "surrogate,victim,method,ratio,white_box,seeds,success_rate\n";
    for (const auto& row : r.rows)
        o << r.surrogate << ",mean," << row.method << ',' << format_real(row.config["ratio"].get<Real>()) << ",0,"
          << row.per_seed.size() << ',' << format_real(row.mean_rate) << '\n';
    return o.str();
}

void write_text(const std::filesystem::path& path, const std::string& text) {
    write_file(path, std::vector<std::uint8_t>(text.begin(), text.end()));
}

}  // namespace mup
