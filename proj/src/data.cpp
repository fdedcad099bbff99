#include "nilm/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "nilm/errors.hpp"
#include "nilm/hash.hpp"
#include "nilm/rng.hpp"

namespace nilm {

// ---- REDD channel files ---------------------------------------------------

void ChannelSeries::validate() const {
    if (timestamps.size() != watts.size()) throw DataError("channel: timestamp/watt count mismatch");
    for (std::size_t i = 0; i < timestamps.size(); ++i) {
        if (i > 0 && timestamps[i] <= timestamps[i - 1]) {
            throw DataError("channel: timestamps not strictly increasing at index " + std::to_string(i));
        }
        if (!(watts[i] >= 0.0) || !std::isfinite(watts[i])) {
            throw DataError("channel: invalid reading at index " + std::to_string(i));
        }
    }
}

ChannelSeries parse_redd_channel(std::istream& in) {
    ChannelSeries s;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto sp = line.find(' ');
        if (sp == std::string::npos) throw ParseError("expected '<timestamp> <watts>'", lineno);
        std::int64_t ts = 0;
        double w = 0.0;
        const char* b = line.data();
        const char* e = b + line.size();
        auto r1 = std::from_chars(b, b + sp, ts);
        if (r1.ec != std::errc() || r1.ptr != b + sp) throw ParseError("bad timestamp", lineno);
        auto r2 = std::from_chars(b + sp + 1, e, w);
        if (r2.ec != std::errc() || r2.ptr != e) throw ParseError("bad watt reading", lineno);
        if (!std::isfinite(w) || w < 0.0) throw ParseError("negative or non-finite watt reading", lineno);
        if (!s.timestamps.empty() && ts <= s.timestamps.back()) {
            throw DataError("timestamps not strictly increasing (line " + std::to_string(lineno) + ")");
        }
        s.timestamps.push_back(ts);
        s.watts.push_back(w);
    }
    if (s.timestamps.empty()) throw DataError("empty channel series");
    return s;
}

ChannelSeries load_redd_channel(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open channel file " + path.string());
    try {
        return parse_redd_channel(in);
    } catch (const DataError& e) {
        throw DataError(path.string() + ": " + e.what());
    }
}

void write_redd_channel(std::ostream& out, const ChannelSeries& series) {
    series.validate();
    char buf[64];
    for (std::size_t i = 0; i < series.size(); ++i) {
        auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), series.watts[i]);
        out << series.timestamps[i] << ' ' << std::string_view(buf, static_cast<std::size_t>(ptr - buf)) << '\n';
    }
}

void write_redd_channel(const std::filesystem::path& path, const ChannelSeries& series) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw DataError("cannot write channel file " + path.string());
    write_redd_channel(out, series);
}

// ---- appliance table ------------------------------------------------------

void ApplianceSpec::validate() const {
    if (!(on_threshold_watts > 0.0 && on_threshold_watts < cutoff_watts)) {
        throw DataError("appliance '" + name + "': need 0 < on_threshold < cutoff");
    }
    if (min_on_sec < 0.0 || min_off_sec < 0.0) throw DataError("appliance '" + name + "': negative hold time");
}

const std::vector<ApplianceSpec>& default_appliance_specs() {
    // watts / seconds
    static const std::vector<ApplianceSpec> specs = {
        {"fridge", 400.0, 50.0, 60.0, 12.0},
        {"washer", 3998.0, 20.0, 300.0, 26.0},
        {"microwave", 1800.0, 200.0, 12.0, 30.0},
        {"dishwasher", 1200.0, 10.0, 1800.0, 1800.0},
    };
    return specs;
}

ApplianceSpec default_appliance_spec(const std::string& name) {
    for (const auto& s : default_appliance_specs())
        if (s.name == name) return s;
    throw DataError("no default appliance spec for '" + name + "'");
}

std::vector<std::uint8_t> compute_status(std::span<const double> watts, const ApplianceSpec& spec, double period_sec) {
    const std::size_t n = watts.size();
    std::vector<std::pair<std::size_t, std::size_t>> events;  // [start, end)
    for (std::size_t i = 0; i < n;) {
        if (watts[i] >= spec.on_threshold_watts) {
            std::size_t j = i;
            while (j < n && watts[j] >= spec.on_threshold_watts) ++j;
            events.emplace_back(i, j);
            i = j;
        } else {
            ++i;
        }
    }
    std::vector<std::pair<std::size_t, std::size_t>> merged;
    for (const auto& ev : events) {
        if (!merged.empty() && static_cast<double>(ev.first - merged.back().second) * period_sec < spec.min_off_sec) {
            merged.back().second = ev.second;
        } else {
            merged.push_back(ev);
        }
    }
    std::vector<std::uint8_t> status(n, 0);
    for (const auto& [s, e] : merged) {
        if (static_cast<double>(e - s) * period_sec < spec.min_on_sec) continue;
        std::fill(status.begin() + static_cast<std::ptrdiff_t>(s), status.begin() + static_cast<std::ptrdiff_t>(e), 1);
    }
    return status;
}

// ---- alignment ------------------------------------------------------------

namespace {

// Forward-fill cursor over one channel on an integer grid.
class FillCursor {
   public:
    FillCursor(const ChannelSeries& s, const AlignOptions& o) : s_(s), o_(o) {}

    // Value at grid time t (non-decreasing across calls), or nullopt.
    std::optional<double> at(std::int64_t t) {
        while (k_ + 1 < s_.size() && s_.timestamps[k_ + 1] <= t) ++k_;
        if (s_.timestamps[k_] > t) return std::nullopt;
        const std::int64_t since = t - s_.timestamps[k_];
        if (since < o_.period_sec) return s_.watts[k_];
        if (k_ + 1 < s_.size() && s_.timestamps[k_ + 1] - s_.timestamps[k_] <= o_.max_gap_sec) return s_.watts[k_];
        return std::nullopt;
    }

   private:
    const ChannelSeries& s_;
    const AlignOptions& o_;
    std::size_t k_ = 0;
};

std::int64_t ceil_to_grid(std::int64_t t, std::int64_t p) {
    const std::int64_t r = ((t % p) + p) % p;
    return r == 0 ? t : t + (p - r);
}

}  // namespace

std::size_t AlignedPair::samples() const {
    std::size_t n = 0;
    for (const auto& s : segments) n += s.mains.size();
    return n;
}

AlignedPair align_resample(const ChannelSeries& mains, const ChannelSeries& appliance, const AlignOptions& opts) {
    if (mains.size() == 0 || appliance.size() == 0) throw DataError("align_resample: empty channel");
    if (opts.period_sec <= 0) throw DataError("align_resample: period must be positive");
    const std::int64_t start = ceil_to_grid(std::max(mains.timestamps.front(), appliance.timestamps.front()), opts.period_sec);
    const std::int64_t end = std::min(mains.timestamps.back(), appliance.timestamps.back());
    if (start > end) throw DataError("align_resample: channels do not overlap in time");

    AlignedPair out;
    FillCursor cm(mains, opts), ca(appliance, opts);
    AlignedSegment cur;
    auto flush = [&] {
        if (cur.mains.size() >= opts.min_segment_len && !cur.mains.empty()) out.segments.push_back(std::move(cur));
        cur = AlignedSegment{};
    };
    for (std::int64_t t = start; t <= end; t += opts.period_sec) {
        const auto m = cm.at(t);
        const auto a = ca.at(t);
        if (m && a) {
            if (cur.mains.empty()) cur.start_time = t;
            cur.mains.push_back(*m);
            cur.appliance.push_back(*a);
        } else {
            flush();
        }
    }
    flush();
    return out;
}

ChannelSeries sum_channels(const std::vector<ChannelSeries>& channels, const AlignOptions& opts) {
    if (channels.empty()) throw DataError("sum_channels: no channels");
    if (channels.size() == 1) return channels.front();
    std::int64_t start = channels.front().timestamps.front(), end = channels.front().timestamps.back();
    for (const auto& c : channels) {
        if (c.size() == 0) throw DataError("sum_channels: empty channel");
        start = std::max(start, c.timestamps.front());
        end = std::min(end, c.timestamps.back());
    }
    start = ceil_to_grid(start, opts.period_sec);
    std::vector<FillCursor> cursors;
    for (const auto& c : channels) cursors.emplace_back(c, opts);
    ChannelSeries out;
    for (std::int64_t t = start; t <= end; t += opts.period_sec) {
        double total = 0.0;
        bool ok = true;
        for (auto& cur : cursors) {
            const auto v = cur.at(t);
            if (!v) {
                ok = false;
                continue;
            }
            total += *v;
        }
        if (ok) {
            out.timestamps.push_back(t);
            out.watts.push_back(total);
        }
    }
    if (out.size() == 0) throw DataError("sum_channels: channels do not overlap in time");
    return out;
}

// ---- normalisation and windows --------------------------------------------

NormStats compute_norm_stats(const std::vector<AlignedPair>& pairs, const ApplianceSpec& spec) {
    double sum = 0.0, sq = 0.0;
    std::size_t n = 0;
    for (const auto& p : pairs)
        for (const auto& seg : p.segments)
            for (double v : seg.mains) {
                sum += v;
                ++n;
            }
    if (n == 0) throw DataError("compute_norm_stats: no training samples");
    const double mean = sum / static_cast<double>(n);
    for (const auto& p : pairs)
        for (const auto& seg : p.segments)
            for (double v : seg.mains) sq += (v - mean) * (v - mean);
    double stddev = std::sqrt(sq / static_cast<double>(n));
    if (!(stddev > 0.0)) stddev = 1.0;
    return {mean, stddev, spec.cutoff_watts};
}

double normalize_aggregate(double watts, const NormStats& s) { return (watts - s.mean) / s.std; }
double denormalize_aggregate(double value, const NormStats& s) { return value * s.std + s.mean; }
double normalize_target(double watts, const NormStats& s) { return std::min(watts, s.cutoff) / s.cutoff; }
double denormalize_target(double value, const NormStats& s) { return value * s.cutoff; }

std::uint64_t WindowedDataset::content_hash() const {
    Fnv1a h;
    h.u64(window_len).u64(size());
    h.doubles(aggregate.data()).doubles(target.data()).doubles(status.data());
    return h.value();
}

std::size_t window_count(std::size_t len, std::size_t window, std::size_t stride) {
    if (stride == 0 || window == 0) throw DomainError("window_count: zero window or stride");
    return len < window ? 0 : (len - window) / stride + 1;
}

WindowedDataset make_windows(const AlignedPair& pair, const ApplianceSpec& spec, std::size_t window_len,
                             std::size_t stride, Split split, std::optional<NormStats> stats, int house) {
    spec.validate();
    if (split == Split::Eval && !stats) {
        throw DataError("make_windows: evaluation windows need the training normalisation statistics");
    }
    if (!stats) stats = compute_norm_stats({pair}, spec);
    std::size_t total = 0;
    for (const auto& seg : pair.segments) total += window_count(seg.mains.size(), window_len, stride);

    WindowedDataset ds;
    ds.stats = *stats;
    ds.spec = spec;
    ds.window_len = window_len;
    ds.aggregate = Tensor({total, window_len});
    ds.target = Tensor({total, window_len});
    ds.status = Tensor({total, window_len});
    ds.house.assign(total, house);
    std::size_t w = 0;
    for (const auto& seg : pair.segments) {
        const auto status = compute_status(seg.appliance, spec);
        const std::size_t count = window_count(seg.mains.size(), window_len, stride);
        for (std::size_t c = 0; c < count; ++c) {
            const std::size_t start = c * stride;
            for (std::size_t t = 0; t < window_len; ++t) {
                ds.aggregate(w, t) = normalize_aggregate(seg.mains[start + t], ds.stats);
                ds.target(w, t) = normalize_target(seg.appliance[start + t], ds.stats);
                ds.status(w, t) = status[start + t];
            }
            ++w;
        }
    }
    return ds;
}

WindowedDataset concat_datasets(const std::vector<WindowedDataset>& parts) {
    if (parts.empty()) throw DataError("concat_datasets: nothing to concatenate");
    WindowedDataset out;
    out.stats = parts.front().stats;
    out.spec = parts.front().spec;
    out.window_len = parts.front().window_len;
    std::size_t total = 0;
    for (const auto& p : parts) {
        if (p.window_len != out.window_len) throw ShapeError("concat_datasets: window length mismatch");
        total += p.size();
    }
    const std::size_t L = out.window_len;
    std::vector<double> agg, tgt, st;
    agg.reserve(total * L);
    tgt.reserve(total * L);
    st.reserve(total * L);
    for (const auto& p : parts) {
        if (p.size() == 0) continue;
        agg.insert(agg.end(), p.aggregate.data().begin(), p.aggregate.data().end());
        tgt.insert(tgt.end(), p.target.data().begin(), p.target.data().end());
        st.insert(st.end(), p.status.data().begin(), p.status.data().end());
        out.house.insert(out.house.end(), p.house.begin(), p.house.end());
    }
    out.aggregate = Tensor({total, L}, std::move(agg));
    out.target = Tensor({total, L}, std::move(tgt));
    out.status = Tensor({total, L}, std::move(st));
    return out;
}

// ---- synthetic generator --------------------------------------------------

SyntheticSpec SyntheticSpec::default_spec() {
    SyntheticSpec s;
    ApplianceArchetype fridge;
    fridge.name = "fridge";
    fridge.on_power = 160.0;
    fridge.mean_on_sec = 900.0;
    fridge.duty_cycle = 0.45;
    fridge.noise_std = 6.0;
    fridge.cycler = true;
    fridge.surge_factor = 1.8;
    fridge.surge_sec = 6.0;

    ApplianceArchetype microwave;
    microwave.name = "microwave";
    microwave.on_power = 1150.0;
    microwave.mean_on_sec = 60.0;
    microwave.duty_cycle = 0.04;
    microwave.noise_std = 25.0;

    ApplianceArchetype lights;
    lights.name = "lights";
    lights.on_power = 90.0;
    lights.mean_on_sec = 1500.0;
    lights.duty_cycle = 0.35;
    lights.noise_std = 2.0;

    ApplianceArchetype kettle;
    kettle.name = "kettle";
    kettle.on_power = 1300.0;
    kettle.mean_on_sec = 150.0;
    kettle.duty_cycle = 0.02;
    kettle.noise_std = 10.0;

    s.appliances = {fridge, microwave};
    s.distractors = {lights, kettle};
    return s;
}

namespace {

std::vector<double> simulate(const ApplianceArchetype& a, std::int64_t duration, SeededRng rng) {
    std::vector<double> p(static_cast<std::size_t>(duration), 0.0);
    if (a.duty_cycle <= 0.0 || a.on_power <= 0.0) return p;
    const double mean_off = a.duty_cycle >= 1.0 ? 0.0 : a.mean_on_sec * (1.0 - a.duty_cycle) / a.duty_cycle;
    auto draw = [&](double mean) -> std::int64_t {
        if (mean <= 0.0) return 0;
        const double d = a.cycler ? mean * rng.uniform(0.8, 1.2) : -mean * std::log(1.0 - rng.uniform());
        return std::max<std::int64_t>(1, std::llround(d));
    };
    bool on = rng.bernoulli(a.duty_cycle);
    std::int64_t t = 0;
    // First state starts at a random phase so houses do not all switch at t=0.
    std::int64_t len = std::max<std::int64_t>(1, std::llround(static_cast<double>(draw(on ? a.mean_on_sec : mean_off)) * rng.uniform()));
    while (t < duration) {
        const std::int64_t stop = std::min(duration, t + len);
        if (on) {
            for (std::int64_t i = t; i < stop; ++i) {
                const bool surge = static_cast<double>(i - t) < a.surge_sec;
                const double level = a.on_power * (surge ? a.surge_factor : 1.0);
                p[static_cast<std::size_t>(i)] = std::max(0.0, level + rng.normal(0.0, a.noise_std));
            }
        }
        t = stop;
        on = !on;
        len = draw(on ? a.mean_on_sec : mean_off);
        if (len == 0) {
            on = !on;
            len = draw(on ? a.mean_on_sec : mean_off);
        }
    }
    return p;
}

}  // namespace

SyntheticHouse synth_generate(const SyntheticSpec& spec) {
    if (spec.duration_sec <= 0) throw DataError("synthetic duration must be positive");
    SeededRng root(spec.seed, 0x73796e7468ULL);
    const auto n = static_cast<std::size_t>(spec.duration_sec);
    std::vector<double> mains(n, spec.baseline_watts);
    SyntheticHouse house;
    std::uint64_t stream = 1;
    for (const auto& a : spec.appliances) {
        const auto p = simulate(a, spec.duration_sec, root.split(stream++));
        for (std::size_t i = 0; i < n; ++i) mains[i] += p[i];
        ChannelSeries cs;
        cs.timestamps.resize(n);
        for (std::size_t i = 0; i < n; ++i) cs.timestamps[i] = spec.start_time + static_cast<std::int64_t>(i);
        cs.watts = p;
        house.appliances.emplace_back(a.name, std::move(cs));
    }
    for (const auto& a : spec.distractors) {
        const auto p = simulate(a, spec.duration_sec, root.split(stream++));
        for (std::size_t i = 0; i < n; ++i) mains[i] += p[i];
    }
    SeededRng noise = root.split(0);
    for (auto& v : mains) v = std::max(0.0, v + (spec.aggregate_noise_std > 0.0 ? noise.normal(0.0, spec.aggregate_noise_std) : 0.0));
    house.mains.timestamps.resize(n);
    for (std::size_t i = 0; i < n; ++i) house.mains.timestamps[i] = spec.start_time + static_cast<std::int64_t>(i);
    house.mains.watts = std::move(mains);
    return house;
}

// ---- manifest -------------------------------------------------------------

std::string redd_protocol_split(int house) { return house == 1 ? "test" : "train"; }

DatasetManifest DatasetManifest::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open dataset manifest " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw DataError("manifest " + path.string() + ": " + e.what());
    }
    DatasetManifest m;
    m.base_dir = path.parent_path();
    try {
        m.name = j.value("name", std::string("dataset"));
        m.sample_period_sec = j.value("sample_period_sec", std::int64_t{1});
        for (const auto& h : j.at("houses")) {
            HouseEntry e;
            e.id = h.at("house").get<int>();
            e.split = h.value("split", redd_protocol_split(e.id));
            e.test_fraction = h.value("test_fraction", 0.2);
            if (e.split != "train" && e.split != "test" && e.split != "time") {
                throw DataError("manifest: house " + std::to_string(e.id) + " has unknown split '" + e.split + "'");
            }
            for (const auto& c : h.at("channels")) e.channels.push_back({c.at("file"), c.at("label")});
            m.houses.push_back(std::move(e));
        }
    } catch (const nlohmann::json::exception& e) {
        throw DataError("manifest " + path.string() + ": " + e.what());
    }
    return m;
}

nlohmann::ordered_json DatasetManifest::to_json() const {
    nlohmann::ordered_json j;
    j["name"] = name;
    j["sample_period_sec"] = sample_period_sec;
    j["houses"] = nlohmann::ordered_json::array();
    for (const auto& h : houses) {
        nlohmann::ordered_json hj;
        hj["house"] = h.id;
        hj["split"] = h.split;
        if (h.split == "time") hj["test_fraction"] = h.test_fraction;
        hj["channels"] = nlohmann::ordered_json::array();
        for (const auto& c : h.channels) hj["channels"].push_back({{"file", c.file}, {"label", c.label}});
        j["houses"].push_back(std::move(hj));
    }
    return j;
}

void DatasetManifest::save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw DataError("cannot write manifest " + path.string());
    out << to_json().dump(2) << '\n';
}

std::vector<std::string> DatasetManifest::appliances() const {
    std::set<std::string> names;
    for (const auto& h : houses)
        for (const auto& c : h.channels)
            if (c.label != "mains") names.insert(c.label);
    return {names.begin(), names.end()};
}

namespace {

// Splits a pair chronologically: samples before the cut go to `head`.
void split_pair_in_time(const AlignedPair& pair, double test_fraction, AlignedPair& head, AlignedPair& tail) {
    const std::size_t total = pair.samples();
    const auto cut = static_cast<std::size_t>(std::llround(static_cast<double>(total) * (1.0 - test_fraction)));
    std::size_t seen = 0;
    for (const auto& seg : pair.segments) {
        const std::size_t len = seg.mains.size();
        if (seen + len <= cut) {
            head.segments.push_back(seg);
        } else if (seen >= cut) {
            tail.segments.push_back(seg);
        } else {
            const std::size_t k = cut - seen;
            AlignedSegment a, b;
            a.start_time = seg.start_time;
            a.mains.assign(seg.mains.begin(), seg.mains.begin() + static_cast<std::ptrdiff_t>(k));
            a.appliance.assign(seg.appliance.begin(), seg.appliance.begin() + static_cast<std::ptrdiff_t>(k));
            b.start_time = seg.start_time + static_cast<std::int64_t>(k);
            b.mains.assign(seg.mains.begin() + static_cast<std::ptrdiff_t>(k), seg.mains.end());
            b.appliance.assign(seg.appliance.begin() + static_cast<std::ptrdiff_t>(k), seg.appliance.end());
            head.segments.push_back(std::move(a));
            tail.segments.push_back(std::move(b));
        }
        seen += len;
    }
}

}  // namespace

SplitDatasets load_dataset(const DatasetManifest& manifest, const ApplianceSpec& spec, std::size_t window_len,
                           std::size_t train_stride, std::size_t eval_stride, AlignOptions opts) {
    spec.validate();
    opts.period_sec = manifest.sample_period_sec;
    opts.min_segment_len = std::max(opts.min_segment_len, window_len);
    std::vector<std::pair<int, AlignedPair>> train_pairs, test_pairs;
    for (const auto& house : manifest.houses) {
        std::vector<ChannelSeries> mains, app;
        for (const auto& c : house.channels) {
            if (c.label == "mains") mains.push_back(load_redd_channel(manifest.base_dir / c.file));
            else if (c.label == spec.name) app.push_back(load_redd_channel(manifest.base_dir / c.file));
        }
        if (app.empty()) continue;
        if (mains.empty()) throw DataError("house " + std::to_string(house.id) + " has no mains channel");
        AlignedPair pair = align_resample(sum_channels(mains, opts), sum_channels(app, opts), opts);
        if (house.split == "train") {
            train_pairs.emplace_back(house.id, std::move(pair));
        } else if (house.split == "test") {
            test_pairs.emplace_back(house.id, std::move(pair));
        } else {
            AlignedPair head, tail;
            split_pair_in_time(pair, house.test_fraction, head, tail);
            AlignedPair head_kept, tail_kept;
            for (auto& s : head.segments)
                if (s.mains.size() >= window_len) head_kept.segments.push_back(std::move(s));
            for (auto& s : tail.segments)
                if (s.mains.size() >= window_len) tail_kept.segments.push_back(std::move(s));
            train_pairs.emplace_back(house.id, std::move(head_kept));
            test_pairs.emplace_back(house.id, std::move(tail_kept));
        }
    }
    if (train_pairs.empty()) throw DataError("no training house contains appliance '" + spec.name + "'");
    std::vector<AlignedPair> for_stats;
    for (const auto& [id, p] : train_pairs) for_stats.push_back(p);
    const NormStats stats = compute_norm_stats(for_stats, spec);

    auto build = [&](const std::vector<std::pair<int, AlignedPair>>& pairs, std::size_t stride, Split split) {
        std::vector<WindowedDataset> parts;
        for (const auto& [id, p] : pairs) parts.push_back(make_windows(p, spec, window_len, stride, split, stats, id));
        if (parts.empty()) {
            WindowedDataset empty;
            empty.stats = stats;
            empty.spec = spec;
            empty.window_len = window_len;
            empty.aggregate = Tensor({0, window_len});
            empty.target = Tensor({0, window_len});
            empty.status = Tensor({0, window_len});
            return empty;
        }
        return concat_datasets(parts);
    };
    SplitDatasets out{build(train_pairs, train_stride, Split::Train), build(test_pairs, eval_stride, Split::Eval)};
    if (out.train.size() == 0) throw DataError("no training windows for appliance '" + spec.name + "'");
    return out;
}

}  // namespace nilm
