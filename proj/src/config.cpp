#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>

#include "flowsync/errors.hpp"
#include "flowsync/trainer.hpp"

namespace flowsync {

namespace {

std::string trim(const std::string& s) {
    const size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    const size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

struct ParseCtx {
    const std::string& origin;
    int line = 0;

    [[noreturn]] void fail(const std::string& msg) const {
        throw ConfigError(origin + ":" + std::to_string(line) + ": " + msg);
    }

    double num(const std::string& v) const {
        try {
            size_t used = 0;
            const double x = std::stod(v, &used);
            if (used != v.size()) fail("malformed number '" + v + "'");
            return x;
        } catch (const ConfigError&) {
            throw;
        } catch (const std::exception&) {
            fail("malformed number '" + v + "'");
        }
    }

    int integer(const std::string& v) const {
        try {
            size_t used = 0;
            const long x = std::stol(v, &used);
            if (used != v.size()) fail("malformed integer '" + v + "'");
            return static_cast<int>(x);
        } catch (const ConfigError&) {
            throw;
        } catch (const std::exception&) {
            fail("malformed integer '" + v + "'");
        }
    }

    uint64_t unsigned64(const std::string& v) const {
        try {
            size_t used = 0;
            const unsigned long long x = std::stoull(v, &used);
            if (used != v.size()) fail("malformed unsigned integer '" + v + "'");
            return x;
        } catch (const ConfigError&) {
            throw;
        } catch (const std::exception&) {
            fail("malformed unsigned integer '" + v + "'");
        }
    }

    bool boolean(const std::string& v) const {
        if (v == "true" || v == "on" || v == "1" || v == "yes") return true;
        if (v == "false" || v == "off" || v == "0" || v == "no") return false;
        fail("malformed boolean '" + v + "' (use true/false)");
    }
};

}  // namespace

void validate(const RunConfig& cfg) {
    validate(cfg.field);
    validate(cfg.solver);
    validate(cfg.reward);
    validate(cfg.ppo);
    if (cfg.checkpoint_every < 1) throw ConfigError("run.checkpoint_every must be at least 1");
    if (cfg.eval_episodes < 1) throw ConfigError("run.eval_episodes must be at least 1");
    if (cfg.workers < 1) throw ConfigError("run.workers must be at least 1");
    if (cfg.output_dir.empty()) throw ConfigError("run.output_dir must not be empty");
}

RunConfig parse_config_text(const std::string& text, const std::string& origin) {
    RunConfig cfg;
    ParseCtx ctx{origin};
    std::istringstream in(text);
    std::string raw;
    std::string section;
    while (std::getline(in, raw)) {
        ++ctx.line;
        const size_t comment = raw.find_first_of("#;");
        std::string line = trim(comment == std::string::npos ? raw : raw.substr(0, comment));
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']') ctx.fail("unterminated section header");
            section = trim(line.substr(1, line.size() - 2));
            if (section != "field" && section != "solver" && section != "reward" &&
                section != "ppo" && section != "run")
                ctx.fail("unknown section [" + section + "]");
            continue;
        }
        const size_t eq = line.find('=');
        if (eq == std::string::npos) ctx.fail("expected 'key = value'");
        const std::string key = trim(line.substr(0, eq));
        const std::string val = trim(line.substr(eq + 1));
        if (key.empty()) ctx.fail("empty key");
        if (val.empty()) ctx.fail("empty value for '" + key + "'");
        if (section.empty()) ctx.fail("key '" + key + "' appears before any [section]");

        if (section == "field") {
            auto& f = cfg.field;
            if (key == "grid_width") f.grid_width = ctx.integer(val);
            else if (key == "grid_height") f.grid_height = ctx.integer(val);
            else if (key == "base_perm") f.base_perm = ctx.num(val);
            else if (key == "lower_upper_ratio") f.lower_upper_ratio = ctx.num(val);
            else if (key == "correlation_length") f.correlation_length = ctx.integer(val);
            else if (key == "log_sigma") f.log_sigma = ctx.num(val);
            else if (key == "racetrack_count") f.racetrack_count = ctx.integer(val);
            else if (key == "racetrack_multiplier") f.racetrack_multiplier = ctx.num(val);
            else if (key == "racetrack_min_length") f.racetrack_min_length = ctx.integer(val);
            else if (key == "racetrack_max_length") f.racetrack_max_length = ctx.integer(val);
            else ctx.fail("unknown key '" + key + "' in [field]");
        } else if (section == "solver") {
            auto& s = cfg.solver;
            if (key == "p_inlet") s.p_inlet = ctx.num(val);
            else if (key == "p_front") s.p_front = ctx.num(val);
            else if (key == "sor_omega") s.sor_omega = ctx.num(val);
            else if (key == "sor_tol") s.sor_tol = ctx.num(val);
            else if (key == "sor_max_iters") s.sor_max_iters = ctx.integer(val);
            else if (key == "substeps_per_action") s.substeps_per_action = ctx.integer(val);
            else if (key == "cfl") s.cfl = ctx.num(val);
            else ctx.fail("unknown key '" + key + "' in [solver]");
        } else if (section == "reward") {
            auto& r = cfg.reward;
            if (key == "mode") {
                if (val == "r1" || val == "symmetric_rows") r.mode = RewardMode::R1_SymmetricRows;
                else if (val == "r2" || val == "symmetric_plus_centroid")
                    r.mode = RewardMode::R2_SymmetricPlusCentroid;
                else ctx.fail("reward.mode must be r1 or r2, got '" + val + "'");
            } else if (key == "alpha") r.alpha = ctx.num(val);
            else if (key == "pair_count") r.pair_count = ctx.integer(val);
            else if (key == "strict_simultaneous") r.strict_simultaneous = ctx.boolean(val);
            else if (key == "step_cap") r.step_cap = ctx.integer(val);
            else ctx.fail("unknown key '" + key + "' in [reward]");
        } else if (section == "ppo") {
            auto& p = cfg.ppo;
            if (key == "gamma") p.gamma = ctx.num(val);
            else if (key == "lambda") p.lambda = ctx.num(val);
            else if (key == "clip_eps") p.clip_eps = ctx.num(val);
            else if (key == "epochs_per_batch") p.epochs_per_batch = ctx.integer(val);
            else if (key == "episodes_per_batch") p.episodes_per_batch = ctx.integer(val);
            else if (key == "total_episodes") p.total_episodes = ctx.integer(val);
            else if (key == "value_coef") p.value_coef = ctx.num(val);
            else if (key == "entropy_coef") p.entropy_coef = ctx.num(val);
            else if (key == "minibatch_size") p.minibatch_size = ctx.integer(val);
            else if (key == "advantage_normalization") p.advantage_normalization = ctx.boolean(val);
            else if (key == "lr") p.lr = ctx.num(val);
            else ctx.fail("unknown key '" + key + "' in [ppo]");
        } else {  // run
            if (key == "master_seed") cfg.master_seed = ctx.unsigned64(val);
            else if (key == "output_dir") cfg.output_dir = val;
            else if (key == "checkpoint_every") cfg.checkpoint_every = ctx.integer(val);
            else if (key == "eval_episodes") cfg.eval_episodes = ctx.integer(val);
            else if (key == "workers") cfg.workers = ctx.integer(val);
            else ctx.fail("unknown key '" + key + "' in [run]");
        }
    }
    validate(cfg);
    return cfg;
}

RunConfig load_config(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open config file '" + path + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_config_text(buf.str(), path);
}

}  // namespace flowsync
