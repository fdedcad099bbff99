#include "nilm/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "nilm/errors.hpp"
#include "nilm/hash.hpp"

namespace nilm {

namespace {

const std::vector<std::string> kData = {"train", "eval", "ablate", "inspect"};
const std::vector<std::string> kModel = {"train", "eval", "ablate", "bench", "inspect", "gradcheck"};
const std::vector<std::string> kFit = {"train", "ablate"};

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

const ConfigKey* find_key(const std::string& name) {
    for (const auto& k : config_keys())
        if (k.name == name) return &k;
    return nullptr;
}

bool applies(const ConfigKey& k, const std::string& command) {
    return std::find(k.commands.begin(), k.commands.end(), command) != k.commands.end();
}

}  // namespace

const std::vector<std::string>& command_names() {
    static const std::vector<std::string> names = {"train", "eval", "ablate", "bench", "inspect", "synth", "gradcheck"};
    return names;
}

const std::vector<ConfigKey>& config_keys() {
    static const std::vector<ConfigKey> keys = [] {
        const auto& all = command_names();
        std::vector<ConfigKey> k = {
            {"seed", "0", all, "random seed"},
            {"out_dir", "out", all, "output directory (NILM_OUT_DIR overrides)"},
            {"data", "", kData, "dataset manifest (manifest.json)"},
            {"appliance", "fridge", {"train", "eval", "inspect"}, "appliance to disaggregate"},
            {"appliances", "", {"ablate", "synth"}, "comma-separated appliances; ablate: empty means all in the manifest",
             {{"synth", "fridge,microwave"}}},
            {"window_len", "480", kModel, "window length L (even)", {{"gradcheck", "32"}}},
            {"train_stride", "0", kData, "training window stride; 0 means L/2"},
            {"eval_stride", "0", kData, "evaluation window stride; 0 means L"},
            {"max_gap", "180", kData, "longest reading gap (s) bridged by forward fill"},
            {"hidden", "16", kModel, "hidden width", {{"gradcheck", "8"}}},
            {"layers", "2", kModel, "transformer layers"},
            {"heads", "2", kModel, "attention heads"},
            {"dropout", "0.5", {"train", "eval", "ablate", "gradcheck"}, "dropout ratio"},
            {"mode", "meta", {"train", "eval", "inspect"}, "standard | masked | fixed:<c> | raw | meta"},
            {"epochs", "100", kFit, "training epochs"},
            {"batch_size", "64", {"train", "eval", "ablate", "bench", "gradcheck"}, "mini-batch size",
             {{"bench", "1"}, {"gradcheck", "2"}}},
            {"lr", "1e-4", kFit, "AdamW learning rate"},
            {"beta1", "0.9", kFit, "AdamW beta1"},
            {"beta2", "0.999", kFit, "AdamW beta2"},
            {"adam_eps", "1e-8", kFit, "AdamW epsilon"},
            {"weight_decay", "0.01", kFit, "AdamW decoupled weight decay"},
            {"clip_norm", "1", kFit, "global gradient-norm clip; 0 disables"},
            {"mask_ratio", "0.3", {"train", "ablate", "gradcheck"}, "masking ratio"},
            {"mask_value", "-1", {"train", "ablate", "gradcheck"}, "value written at masked positions"},
            {"kl_weight", "0.1", {"train", "ablate", "gradcheck"}, "KL term weight"},
            {"margin_weight", "1", {"train", "ablate", "gradcheck"}, "soft-margin term weight"},
            {"l1_on_weight", "1e-3", {"train", "ablate", "gradcheck"}, "L1-on-active term weight"},
            {"record_wall_clock", "false", kFit, "write measured seconds into the epoch log"},
            {"mre_literal", "false", {"eval"}, "report mre as the sum over samples instead of the mean"},
            {"checkpoint", "", {"eval", "inspect"}, "checkpoint file"},
            {"split", "test", {"eval", "inspect"}, "train | test"},
            {"window", "0", {"inspect"}, "window index for attention dumps"},
            {"x", "", {"inspect"}, "comma-separated logits for the smoothing table; empty uses the built-in example"},
            {"dk", "1,4,16,64,256", {"inspect"}, "comma-separated d_k values for the smoothing table"},
            {"reps", "100", {"bench"}, "timed repetitions per variant"},
            {"warmup", "10", {"bench"}, "untimed warm-up repetitions"},
            {"duration", "50000", {"synth"}, "seconds of 1 Hz data per house"},
            {"houses", "1", {"synth"}, "number of houses; 1 gives a time split, more gives house 1 as test"},
            {"test_fraction", "0.2", {"synth"}, "held-out trailing fraction for a single house"},
            {"noise", "5", {"synth"}, "aggregate noise std (W)"},
            {"baseline", "50", {"synth"}, "constant base load (W)"},
            {"tolerance", "1e-4", {"gradcheck"}, "maximum relative error"},
            {"fd_eps", "1e-5", {"gradcheck"}, "finite-difference step"},
        };
        return k;
    }();
    return keys;
}

double parse_number(std::string_view text, const std::string& what) {
    const std::string s = trim(text);
    auto one = [&](std::string_view v) {
        double x = 0.0;
        const auto r = std::from_chars(v.data(), v.data() + v.size(), x);
        if (v.empty() || r.ec != std::errc() || r.ptr != v.data() + v.size() || !std::isfinite(x)) {
            throw UsageError(what + ": '" + s + "' is not a number");
        }
        return x;
    };
    const auto slash = s.find('/');
    if (slash == std::string::npos) return one(s);
    const double den = one(std::string_view(s).substr(slash + 1));
    if (den == 0.0) throw UsageError(what + ": division by zero in '" + s + "'");
    return one(std::string_view(s).substr(0, slash)) / den;
}

RunConfig::RunConfig(std::string command) : command_(std::move(command)) {
    if (std::find(command_names().begin(), command_names().end(), command_) == command_names().end()) {
        throw UsageError("unknown command '" + command_ + "'");
    }
    for (const auto& k : config_keys()) {
        if (!applies(k, command_)) continue;
        const auto it = k.command_defaults.find(command_);
        values_[k.name] = it != k.command_defaults.end() ? it->second : k.default_value;
    }
}

void RunConfig::merge_text(std::string_view text, const std::string& origin) {
    std::istringstream in{std::string(text)};
    std::string line, section;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        const std::string body = trim(hash == std::string::npos ? line : line.substr(0, hash));
        if (body.empty()) continue;
        const std::string where = origin + ":" + std::to_string(lineno);
        if (body.front() == '[') {
            if (body.back() != ']') throw UsageError(where + ": malformed section header");
            section = trim(std::string_view(body).substr(1, body.size() - 2));
            if (std::find(command_names().begin(), command_names().end(), section) == command_names().end()) {
                throw UsageError(where + ": unknown section [" + section + "]");
            }
            continue;
        }
        const auto eq = body.find('=');
        if (eq == std::string::npos) throw UsageError(where + ": expected 'key = value'");
        const std::string key = trim(std::string_view(body).substr(0, eq));
        const std::string value = trim(std::string_view(body).substr(eq + 1));
        const ConfigKey* k = find_key(key);
        if (!k) throw UsageError(where + ": unknown key '" + key + "'");
        if (section.empty()) {
            if (applies(*k, command_)) values_[key] = value;
        } else if (section == command_) {
            if (!applies(*k, command_)) throw UsageError(where + ": key '" + key + "' does not apply to " + command_);
            values_[key] = value;
        } else if (!applies(*k, section)) {
            throw UsageError(where + ": key '" + key + "' does not apply to " + section);
        }
    }
}

void RunConfig::merge_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw UsageError("cannot read config file " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    merge_text(ss.str(), path.string());
}

void RunConfig::set(const std::string& key, const std::string& value) {
    const ConfigKey* k = find_key(key);
    if (!k) throw UsageError("unknown key '" + key + "'");
    if (!applies(*k, command_)) throw UsageError("key '" + key + "' does not apply to " + command_);
    values_[key] = trim(value);
}

void RunConfig::set_assignment(const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos) throw UsageError("expected key=value, got '" + assignment + "'");
    set(trim(std::string_view(assignment).substr(0, eq)), assignment.substr(eq + 1));
}

const std::string& RunConfig::get(const std::string& key) const {
    const auto it = values_.find(key);
    if (it == values_.end()) throw UsageError("key '" + key + "' is not defined for " + command_);
    return it->second;
}

double RunConfig::get_double(const std::string& key) const { return parse_number(get(key), key); }

std::uint64_t RunConfig::get_u64(const std::string& key) const {
    const std::string& s = get(key);
    std::uint64_t v = 0;
    const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
    if (s.empty() || r.ec != std::errc() || r.ptr != s.data() + s.size()) {
        throw UsageError(key + ": '" + s + "' is not a non-negative integer");
    }
    return v;
}

std::size_t RunConfig::get_size(const std::string& key) const { return static_cast<std::size_t>(get_u64(key)); }

bool RunConfig::get_bool(const std::string& key) const {
    const std::string& s = get(key);
    if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
    if (s == "false" || s == "0" || s == "no" || s == "off") return false;
    throw UsageError(key + ": '" + s + "' is not a boolean");
}

std::vector<std::string> RunConfig::get_list(const std::string& key) const {
    std::vector<std::string> out;
    const std::string& s = get(key);
    if (trim(s).empty()) return out;
    std::size_t start = 0;
    while (true) {
        const auto comma = s.find(',', start);
        const std::string item = trim(std::string_view(s).substr(start, comma == std::string::npos ? std::string::npos : comma - start));
        if (item.empty()) throw UsageError(key + ": empty list item");
        out.push_back(item);
        if (comma == std::string::npos) break;
        start = comma + 1;
    }
    return out;
}

std::vector<double> RunConfig::get_double_list(const std::string& key) const {
    std::vector<double> out;
    for (const auto& item : get_list(key)) out.push_back(parse_number(item, key));
    return out;
}

std::string RunConfig::canonical() const {
    std::string s = "command=" + command_ + "\n";
    for (const auto& [k, v] : values_) {
        if (k == "out_dir") continue;
        s += k + "=" + v + "\n";
    }
    return s;
}

std::uint64_t RunConfig::hash() const { return Fnv1a().str(canonical()).value(); }

std::string RunConfig::hash_hex() const { return to_hex(hash()); }

}  // namespace nilm
