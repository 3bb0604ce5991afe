#include "mup/run_config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <algorithm>
#include <charconv>
#include <map>
#include <set>
#include <sstream>

namespace mup {

namespace {

namespace pt = boost::property_tree;

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (start <= s.size()) {
        std::size_t comma = s.find(',', start);
        if (comma == std::string::npos) comma = s.size();
        out.push_back(trim(std::string_view(s).substr(start, comma - start)));
        start = comma + 1;
    }
    if (out.size() == 1 && out[0].empty()) out.clear();
    return out;
}

template <class T>
bool parse_number(const std::string& text, T& out) {
    const char* b = text.data();
    const char* e = b + text.size();
    auto res = std::from_chars(b, e, out);
    return res.ec == std::errc() && res.ptr == e;
}

/// Reads typed values from one INI tree while recording every problem and
/// every key that was recognized.
class Reader {
   public:
    explicit Reader(const pt::ptree& tree) : tree_(tree) {}

    std::vector<std::string>& problems() { return problems_; }

    const std::string* raw(const std::string& section, const std::string& key) {
        known_[section].insert(key);
        auto sec = tree_.get_child_optional(pt::ptree::path_type(section, '\0'));
        if (!sec) return nullptr;
        auto v = sec->get_child_optional(pt::ptree::path_type(key, '\0'));
        if (!v) return nullptr;
        return &v->data();
    }

    template <class T>
    void number(const std::string& section, const std::string& key, T& out) {
        const std::string* v = raw(section, key);
        if (!v) return;
        T parsed{};
        if (!parse_number(trim(*v), parsed))
            problems_.push_back(section + "." + key + ": cannot parse '" + *v + "' as a number");
        else
            out = parsed;
    }

    void boolean(const std::string& section, const std::string& key, bool& out) {
        const std::string* v = raw(section, key);
        if (!v) return;
        std::string t = trim(*v);
        if (t == "true" || t == "1")
            out = true;
        else if (t == "false" || t == "0")
            out = false;
        else
            problems_.push_back(section + "." + key + ": expected true or false, got '" + *v + "'");
    }

    void text(const std::string& section, const std::string& key, std::string& out) {
        if (const std::string* v = raw(section, key)) out = trim(*v);
    }

    /// Returns true when the key is present (even if the list is empty).
    bool list(const std::string& section, const std::string& key, std::vector<std::string>& out) {
        const std::string* v = raw(section, key);
        if (!v) return false;
        out = split_list(*v);
        return true;
    }

    template <class T>
    void number_list(const std::string& section, const std::string& key, std::vector<T>& out) {
        std::vector<std::string> items;
        if (!list(section, key, items)) return;
        std::vector<T> parsed;
        for (const auto& item : items) {
            T x{};
            if (!parse_number(item, x)) {
                problems_.push_back(section + "." + key + ": cannot parse '" + item + "' as a number");
                return;
            }
            parsed.push_back(x);
        }
        out = std::move(parsed);
    }

    void reject_unknown() {
        for (const auto& [section, body] : tree_) {
            auto k = known_.find(section);
            if (k == known_.end()) {
                problems_.push_back("unknown section [" + section + "]");
                continue;
            }
            for (const auto& [key, value] : body)
                if (!k->second.count(key)) problems_.push_back("unknown key " + section + "." + key);
        }
    }

   private:
    const pt::ptree& tree_;
    std::map<std::string, std::set<std::string>> known_;
    std::vector<std::string> problems_;
};

void check_methods(const std::vector<std::string>& names, const std::string& where, std::vector<std::string>& problems) {
    for (const auto& m : names) {
        try {
            apply_method(m, AttackConfig{});
        } catch (const ConfigError&) {
            problems.push_back(where + ": unknown method '" + m + "'");
        }
    }
}

void check_ids(const std::vector<std::string>& ids, const std::vector<std::string>& known, const std::string& where,
               std::vector<std::string>& problems) {
    for (const auto& id : ids)
        if (std::find(known.begin(), known.end(), id) == known.end())
            problems.push_back(where + ": unknown model id '" + id + "'");
}

}  // namespace

std::vector<std::string> RunConfig::model_ids() const {
    std::vector<std::string> ids;
    for (const auto& a : archs)
        for (std::size_t i = 0; i < replicas; ++i) ids.push_back(a + "-" + std::to_string(i));
    return ids;
}

AttackConfig RunConfig::attack_config() const {
    AttackConfig ac = apply_method(attack_method, harness.attack);
    const auto it = harness.ratios.find(ac.inner);
    if (ac.masking == Masking::mup && it != harness.ratios.end()) ac.ratio = it->second;
    if (attack_ratio) ac.ratio = *attack_ratio;
    ac.seed = harness.seeds.empty() ? 0 : harness.seeds.front();
    ac.validate();
    return ac;
}

std::uint64_t RunConfig::replica_seed(std::size_t replica) const { return derive_seed(seed, {kModelStream, replica}); }

RunConfig parse_run_config(const std::string& text) {
    pt::ptree tree;
    try {
        std::istringstream in(text);
        pt::read_ini(in, tree);
    } catch (const pt::ini_parser_error& e) {
        throw ConfigError({"line " + std::to_string(e.line()) + ": " + e.message()});
    }

    RunConfig c;
    Reader r(tree);
    auto& problems = r.problems();

    r.number("run", "seed", c.seed);
    std::string out = c.output_dir.string();
    r.text("run", "output_dir", out);
    c.output_dir = out;

    DatasetSpec& d = c.dataset;
    r.number("dataset", "classes", d.classes);
    r.number("dataset", "per_class", d.per_class);
    std::size_t channels = d.image_shape[0], height = d.image_shape[1], width = d.image_shape[2];
    r.number("dataset", "channels", channels);
    r.number("dataset", "height", height);
    r.number("dataset", "width", width);
    d.image_shape = {channels, height, width};
    r.number("dataset", "blobs", d.blobs);
    r.number("dataset", "background", d.background);
    r.number("dataset", "amplitude_lo", d.amplitude_lo);
    r.number("dataset", "amplitude_hi", d.amplitude_hi);
    r.number("dataset", "noise", d.noise);
    r.number("dataset", "shift", d.shift);
    r.number("dataset", "test_fraction", d.test_fraction);

    r.list("train", "archs", c.archs);
    r.number("train", "replicas", c.replicas);
    r.number("train", "epochs", c.train.epochs);
    r.number("train", "learning_rate", c.train.learning_rate);
    r.number("train", "batch_size", c.train.batch_size);
    r.number("train", "weight_decay", c.train.weight_decay);

    AttackConfig& a = c.harness.attack;
    r.text("attack", "method", c.attack_method);
    r.text("attack", "surrogate", c.attack_surrogate);
    r.number("attack", "epsilon", a.epsilon);
    r.number("attack", "beta", a.beta);
    r.number("attack", "iterations", a.iterations);
    r.number("attack", "mu", a.mu);
    r.number("attack", "sim_copies", a.sim_copies);
    r.number("attack", "taig_samples", a.taig_samples);
    r.number("attack", "ratio_mim", c.harness.ratios[InnerGradient::plain]);
    r.number("attack", "ratio_sim", c.harness.ratios[InnerGradient::sim]);
    r.number("attack", "ratio_taigr", c.harness.ratios[InnerGradient::taigr]);
    {
        Real ratio = 0;
        if (r.raw("attack", "ratio")) {
            r.number("attack", "ratio", ratio);
            c.attack_ratio = ratio;
        }
    }
    r.boolean("attack", "mask_biases", a.mask_biases);
    r.number("attack", "drop_rate", a.drop_rate);

    r.list("eval", "methods", c.methods);
    const bool surrogates_set = r.list("eval", "surrogates", c.surrogates);
    const bool victims_set = r.list("eval", "victims", c.victims);
    std::size_t attack_seeds = c.harness.seeds.size();
    r.number("eval", "attack_seeds", attack_seeds);
    r.number("eval", "eval_size", c.harness.eval_size);
    r.number("eval", "accuracy_floor", c.harness.accuracy_floor);

    r.text("sweep", "method", c.sweep_method);
    r.number_list("sweep", "ratios", c.sweep_ratios);

    r.text("ablate", "base", c.ablation_base);

    r.reject_unknown();

    // Derived streams.
    d.seed = derive_seed(c.seed, {kDatasetStream});
    c.train.seed = c.replica_seed(0);
    c.harness.seeds.clear();
    for (std::size_t j = 0; j < attack_seeds; ++j) c.harness.seeds.push_back(derive_seed(c.seed, {kAttackStream, j}));

    // Constraints.
    for (auto& p : d.problems()) problems.push_back("dataset: " + p);
    for (auto& p : c.train.problems()) problems.push_back("train: " + p);
    if (c.archs.empty()) problems.push_back("train.archs: at least one architecture is required");
    for (const auto& arch : c.archs) {
        const auto names = arch_preset_names();
        if (std::find(names.begin(), names.end(), arch) == names.end())
            problems.push_back("train.archs: unknown architecture '" + arch + "'");
    }
    if (c.replicas < 1) problems.push_back("train.replicas must be >= 1");
    if (attack_seeds < 1) problems.push_back("eval.attack_seeds must be >= 1");
    for (auto& p : c.harness.problems()) problems.push_back("attack: " + p);

    check_methods({c.attack_method}, "attack.method", problems);
    check_methods(c.methods, "eval.methods", problems);
    if (c.methods.empty()) problems.push_back("eval.methods: at least one method is required");
    check_methods({c.sweep_method}, "sweep.method", problems);
    check_methods({c.ablation_base}, "ablate.base", problems);
    auto collect = [&](auto&& fn) {
        try {
            fn();
        } catch (const ConfigError& e) {
            for (const auto& p : e.problems())
                if (p.find("unknown method") == std::string::npos) problems.push_back("attack: " + p);
        }
    };
    collect([&] {
        if (apply_method(c.sweep_method, AttackConfig{}).masking != Masking::mup)
            problems.push_back("sweep.method must be a mup method, got '" + c.sweep_method + "'");
    });
    collect([&] {
        if (apply_method(c.ablation_base, AttackConfig{}).masking != Masking::none)
            problems.push_back("ablate.base must be an unmasked method, got '" + c.ablation_base + "'");
    });
    for (const auto& m : c.methods) collect([&] { c.harness.method(m, 0); });
    collect([&] { c.attack_config(); });

    if (c.sweep_ratios.empty() || c.sweep_ratios.front() != 0) problems.push_back("sweep.ratios must start at 0");
    for (std::size_t i = 0; i < c.sweep_ratios.size(); ++i) {
        if (i > 0 && !(c.sweep_ratios[i] > c.sweep_ratios[i - 1]))
            problems.push_back("sweep.ratios must be strictly increasing");
        if (!(c.sweep_ratios[i] >= 0 && c.sweep_ratios[i] < 1))
            problems.push_back("sweep.ratios: every ratio must satisfy 0 <= r < 1");
    }

    const auto ids = c.model_ids();
    if (surrogates_set && c.surrogates.empty()) problems.push_back("eval.surrogates is present but empty");
    if (victims_set && c.victims.empty()) problems.push_back("eval.victims is present but empty");
    check_ids(c.surrogates, ids, "eval.surrogates", problems);
    check_ids(c.victims, ids, "eval.victims", problems);
    check_ids({c.attack_surrogate}, ids, "attack.surrogate", problems);

    // keep messages unique and in first-seen order
    std::vector<std::string> unique;
    for (auto& p : problems)
        if (std::find(unique.begin(), unique.end(), p) == unique.end()) unique.push_back(p);
    if (!unique.empty()) throw ConfigError(std::move(unique));
    return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
    auto bytes = read_file(path);
    return parse_run_config(std::string(bytes.begin(), bytes.end()));
}

}  // namespace mup
