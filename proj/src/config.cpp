#include "isdiff/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

namespace isdiff {

namespace {

std::string trim(const std::string& s) {
    const auto first = s.find_first_not_of(" \t\r");
    if (first == std::string::npos) {
        return {};
    }
    const auto last = s.find_last_not_of(" \t\r");
    return s.substr(first, last - first + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
    T value{};
    const char* begin = text.data();
    const char* end = begin + text.size();
    auto [ptr, ec] = std::from_chars(begin, end, value);
    if (ec != std::errc() || ptr != end) {
        throw Error(ErrorCode::config, "bad value '" + text + "' for key " + key);
    }
    return value;
}

bool parse_bool(const std::string& key, const std::string& text) {
    if (text == "true" || text == "1") {
        return true;
    }
    if (text == "false" || text == "0") {
        return false;
    }
    throw Error(ErrorCode::config, "bad boolean '" + text + "' for key " + key);
}

std::string format(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

struct Entry {
    const char* key;
    std::function<std::string(const RunConfig&)> get;
    std::function<void(RunConfig&, const std::string&, const std::string&)> set;
};

#define INT_ENTRY(name, field)                                                                        \
    Entry {                                                                                           \
        name, [](const RunConfig& c) { return std::to_string(c.field); },                             \
            [](RunConfig& c, const std::string& k, const std::string& v) {                            \
                c.field = parse_number<decltype(c.field)>(k, v);                                      \
            }                                                                                         \
    }
#define REAL_ENTRY(name, field)                                                                       \
    Entry {                                                                                           \
        name, [](const RunConfig& c) { return format(c.field); },                                     \
            [](RunConfig& c, const std::string& k, const std::string& v) { c.field = parse_number<double>(k, v); } \
    }

const std::vector<Entry>& entries() {
    static const std::vector<Entry> table = {
        INT_ENTRY("schedule.T", T),
        REAL_ENTRY("schedule.beta_start", beta_start),
        REAL_ENTRY("schedule.beta_end", beta_end),
        Entry{"sampler.kind",
              [](const RunConfig& c) { return std::string(c.sampler.kind == SamplerKind::ddpm ? "ddpm" : "ddim"); },
              [](RunConfig& c, const std::string& k, const std::string& v) {
                  if (v == "ddpm") {
                      c.sampler.kind = SamplerKind::ddpm;
                  } else if (v == "ddim") {
                      c.sampler.kind = SamplerKind::ddim;
                  } else {
                      throw Error(ErrorCode::config, "bad value '" + v + "' for key " + k + " (ddpm or ddim)");
                  }
              }},
        INT_ENTRY("sampler.steps", sampler.steps),
        REAL_ENTRY("sampler.eta", sampler.eta),
        INT_ENTRY("em.K", em.components),
        INT_ENTRY("em.max_iters", em.max_iters),
        REAL_ENTRY("em.tol", em.tolerance),
        REAL_ENTRY("em.var_floor", em.variance_floor),
        INT_ENTRY("em.seed", em.seed),
        INT_ENTRY("em.max_points", em.max_points),
        REAL_ENTRY("isdiff.eps_threshold", refinement.eps_threshold),
        REAL_ENTRY("isdiff.tc_fraction", refinement.tc_fraction),
        INT_ENTRY("isdiff.n_max", refinement.n_max),
        REAL_ENTRY("isdiff.dt_fraction", refinement.dt_fraction),
        INT_ENTRY("isdiff.t_hat_initial", refinement.t_hat_initial),
        INT_ENTRY("isdiff.hist_bins", refinement.hist_bins),
        REAL_ENTRY("isdiff.hist_delta", refinement.hist_delta),
        Entry{"isdiff.freeze_seed",
              [](const RunConfig& c) { return std::string(c.refinement.freeze_seed ? "true" : "false"); },
              [](RunConfig& c, const std::string& k, const std::string& v) {
                  c.refinement.freeze_seed = parse_bool(k, v);
              }},
        Entry{"strategy.kind", [](const RunConfig& c) { return std::string(to_string(c.strategy)); },
              [](RunConfig& c, const std::string&, const std::string& v) { c.strategy = parse_strategy(v); }},
        INT_ENTRY("repaint.r", repaint.repeat),
        INT_ENTRY("repaint.j", repaint.jump),
        Entry{"oracle.kind", [](const RunConfig& c) { return c.oracle_kind; },
              [](RunConfig& c, const std::string&, const std::string& v) { c.oracle_kind = v; }},
        Entry{"oracle.weights", [](const RunConfig& c) { return c.oracle_weights; },
              [](RunConfig& c, const std::string&, const std::string& v) { c.oracle_weights = v; }},
        REAL_ENTRY("oracle.gray", oracle_gray),
        Entry{"bench.task", [](const RunConfig& c) { return c.bench_task; },
              [](RunConfig& c, const std::string&, const std::string& v) { c.bench_task = v; }},
        INT_ENTRY("bench.runs", bench_runs),
        INT_ENTRY("bench.pairs", bench_pairs),
        Entry{"bench.mask", [](const RunConfig& c) { return std::string(to_string(c.bench_mask)); },
              [](RunConfig& c, const std::string&, const std::string& v) { c.bench_mask = parse_mask_kind(v); }},
        INT_ENTRY("bench.error_bins", bench_error_bins),
        INT_ENTRY("bench.kl_samples", bench_kl_samples),
        REAL_ENTRY("bench.calibration_percentile", bench_calibration_percentile),
    };
    return table;
}

#undef INT_ENTRY
#undef REAL_ENTRY

const Entry& find_entry(const std::string& key) {
    for (const auto& e : entries()) {
        if (key == e.key) {
            return e;
        }
    }
    throw Error(ErrorCode::config, "unknown config key '" + key + "'");
}

}  // namespace

NoiseSchedule RunConfig::schedule() const {
    return make_linear_schedule(T, beta_start, beta_end);
}

StrategyConfig RunConfig::strategy_config() const {
    return {strategy, sampler, repaint};
}

BenchSettings RunConfig::bench_settings() const {
    BenchSettings b;
    b.schedule = schedule();
    b.strategy = strategy_config();
    b.refinement = refinement;
    b.em = em;
    b.mask.kind = bench_mask;
    b.error_bins = bench_error_bins;
    b.kl_samples = static_cast<std::size_t>(bench_kl_samples);
    b.threads = default_threads();
    return b;
}

void RunConfig::validate() const {
    try {
        const NoiseSchedule s = schedule();
        sampler.validate(s);
        em.validate();
        refinement.validate(s);
        repaint.validate();
    } catch (const Error& e) {
        if (e.code() == ErrorCode::config) {
            throw;
        }
        throw Error(ErrorCode::config, std::string("invalid config: ") + e.what());
    }
    if (oracle_kind != "fit" && oracle_kind != "mlp" && oracle_kind != "gray") {
        throw Error(ErrorCode::config, "oracle.kind must be fit, mlp or gray");
    }
    if (oracle_kind == "mlp" && oracle_weights.empty()) {
        throw Error(ErrorCode::config, "oracle.kind=mlp needs oracle.weights");
    }
    if (!(oracle_gray >= -1.0 && oracle_gray <= 1.0)) {
        throw Error(ErrorCode::config, "oracle.gray must lie in [-1, 1]");
    }
    if (bench_runs < 1 || bench_pairs < 1) {
        throw Error(ErrorCode::config, "bench.runs and bench.pairs must be at least 1");
    }
    if (bench_error_bins < 2 || bench_kl_samples < 2) {
        throw Error(ErrorCode::config, "bench.error_bins and bench.kl_samples must be at least 2");
    }
    if (!(bench_calibration_percentile >= 0.0 && bench_calibration_percentile <= 100.0)) {
        throw Error(ErrorCode::config, "bench.calibration_percentile must lie in [0, 100]");
    }
    if (bench_mask == MaskKind::custom) {
        throw Error(ErrorCode::config, "bench.mask must be half, expand or wide");
    }
    task_by_name(bench_task);
}

bool RunConfig::operator==(const RunConfig& other) const {
    for (const auto& e : entries()) {
        if (e.get(*this) != e.get(other)) {
            return false;
        }
    }
    return true;
}

RunConfig bench_profile() {
    RunConfig c;
    c.T = 100;
    c.sampler.steps = 100;
    return c;
}

std::vector<std::string> config_keys() {
    std::vector<std::string> keys;
    for (const auto& e : entries()) {
        keys.emplace_back(e.key);
    }
    return keys;
}

std::string config_value(const RunConfig& cfg, const std::string& key) {
    return find_entry(key).get(cfg);
}

void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value) {
    find_entry(key).set(cfg, key, value);
}

RunConfig parse_config(std::istream& is, RunConfig base) {
    std::set<std::string> seen;
    std::string line;
    int line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        if (const auto hash = line.find('#'); hash != std::string::npos) {
            line.erase(hash);
        }
        line = trim(line);
        if (line.empty()) {
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw Error(ErrorCode::config, "line " + std::to_string(line_no) + ": expected key=value");
        }
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (!seen.insert(key).second) {
            throw Error(ErrorCode::config, "line " + std::to_string(line_no) + ": duplicate key " + key);
        }
        set_config_value(base, key, value);
    }
    base.validate();
    return base;
}

RunConfig load_config(const std::filesystem::path& path, RunConfig base) {
    std::ifstream in(path);
    if (!in) {
        throw Error(ErrorCode::io, "cannot open config file " + path.string());
    }
    return parse_config(in, std::move(base));
}

std::string dump_config(const RunConfig& cfg) {
    std::ostringstream os;
    for (const auto& e : entries()) {
        os << e.key << '=' << e.get(cfg) << '\n';
    }
    return os.str();
}

}  // namespace isdiff
