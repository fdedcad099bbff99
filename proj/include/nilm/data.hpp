#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "nilm/tensor.hpp"

namespace nilm {

// One REDD low-frequency channel: strictly increasing unix timestamps and
// non-negative watts.
struct ChannelSeries {
    std::vector<std::int64_t> timestamps;
    std::vector<double> watts;

    std::size_t size() const { return timestamps.size(); }
    void validate() const;
};

// Lines of "<unix_timestamp> <watts>".
ChannelSeries parse_redd_channel(std::istream& in);
ChannelSeries load_redd_channel(const std::filesystem::path& path);
void write_redd_channel(std::ostream& out, const ChannelSeries& series);
void write_redd_channel(const std::filesystem::path& path, const ChannelSeries& series);

struct ApplianceSpec {
    std::string name;
    double cutoff_watts = 0.0;        // normalisation ceiling
    double on_threshold_watts = 0.0;  // status is on at or above this
    double min_on_sec = 0.0;
    double min_off_sec = 0.0;

    void validate() const;
};

// fridge, washer, microwave, dishwasher.
const std::vector<ApplianceSpec>& default_appliance_specs();
// Throws DataError for a name outside the table.
ApplianceSpec default_appliance_spec(const std::string& name);

// Binary status from a power trace sampled every `period_sec` seconds: on
// where watts >= threshold, then off-gaps shorter than min_off are bridged
// and on-runs shorter than min_on are dropped.
std::vector<std::uint8_t> compute_status(std::span<const double> watts, const ApplianceSpec& spec,
                                         double period_sec = 1.0);

struct AlignOptions {
    std::int64_t period_sec = 1;
    std::int64_t max_gap_sec = 180;  // longer gaps split a segment instead of being filled
    std::size_t min_segment_len = 1;
};

struct AlignedSegment {
    std::int64_t start_time = 0;
    std::vector<double> mains;
    std::vector<double> appliance;
};

struct AlignedPair {
    std::vector<AlignedSegment> segments;
    std::size_t samples() const;
};

AlignedPair align_resample(const ChannelSeries& mains, const ChannelSeries& appliance, const AlignOptions& opts = {});

// Sum of channels on a common grid (e.g. two REDD mains legs). Grid points
// where any channel is unavailable are dropped.
ChannelSeries sum_channels(const std::vector<ChannelSeries>& channels, const AlignOptions& opts = {});

struct NormStats {
    double mean = 0.0;
    double std = 1.0;
    double cutoff = 1.0;
};

NormStats compute_norm_stats(const std::vector<AlignedPair>& pairs, const ApplianceSpec& spec);

double normalize_aggregate(double watts, const NormStats& s);
double denormalize_aggregate(double value, const NormStats& s);
double normalize_target(double watts, const NormStats& s);
double denormalize_target(double value, const NormStats& s);

enum class Split { Train, Eval };

struct WindowedDataset {
    Tensor aggregate;  // [N x L], standardised
    Tensor target;     // [N x L], clipped to cutoff then divided by it
    Tensor status;     // [N x L], 0/1
    std::vector<int> house;  // source house per window
    NormStats stats;
    ApplianceSpec spec;
    std::size_t window_len = 0;

    std::size_t size() const { return aggregate.empty() ? 0 : aggregate.dim(0); }
    // Hash of all window contents.
    std::uint64_t content_hash() const;
};

std::size_t window_count(std::size_t len, std::size_t window, std::size_t stride);

// Sliding windows over every segment. Eval splits must be given the training
// statistics; train splits compute their own when none are supplied.
WindowedDataset make_windows(const AlignedPair& pair, const ApplianceSpec& spec, std::size_t window_len,
                             std::size_t stride, Split split, std::optional<NormStats> stats = std::nullopt,
                             int house = 0);

WindowedDataset concat_datasets(const std::vector<WindowedDataset>& parts);

// ---- synthetic data -------------------------------------------------------

struct ApplianceArchetype {
    std::string name;
    double on_power = 0.0;
    double mean_on_sec = 60.0;
    double duty_cycle = 0.5;
    double noise_std = 0.0;
    bool cycler = false;       // near-regular cycles instead of exponential durations
    double surge_factor = 1.0;  // multi-state start-up: power * surge for surge_sec
    double surge_sec = 0.0;
};

struct SyntheticSpec {
    std::int64_t duration_sec = 50000;
    std::int64_t start_time = 1303132929;
    double baseline_watts = 50.0;
    double aggregate_noise_std = 5.0;
    std::vector<ApplianceArchetype> appliances;
    // Loads present in the mains but not written as channels.
    std::vector<ApplianceArchetype> distractors;
    std::uint64_t seed = 0;

    // Fridge-like cycler (easy) and microwave-like bursts (hard), plus
    // unlabelled background loads.
    static SyntheticSpec default_spec();
};

struct SyntheticHouse {
    ChannelSeries mains;
    std::vector<std::pair<std::string, ChannelSeries>> appliances;
};

SyntheticHouse synth_generate(const SyntheticSpec& spec);

// ---- dataset manifest -----------------------------------------------------

struct ChannelRef {
    std::string file;   // relative to the manifest directory
    std::string label;  // "mains" or an appliance name
};

struct HouseEntry {
    int id = 0;
    std::string split = "train";  // train | test | time
    double test_fraction = 0.2;   // split == "time": trailing fraction held out
    std::vector<ChannelRef> channels;
};

struct DatasetManifest {
    std::string name;
    std::int64_t sample_period_sec = 1;
    std::vector<HouseEntry> houses;
    std::filesystem::path base_dir;

    static DatasetManifest load(const std::filesystem::path& path);
    void save(const std::filesystem::path& path) const;
    nlohmann::ordered_json to_json() const;
    // Appliance labels present in any house, sorted.
    std::vector<std::string> appliances() const;
};

// Houses 2-6 train, house 1 test.
std::string redd_protocol_split(int house);

struct SplitDatasets {
    WindowedDataset train;
    WindowedDataset test;
};

SplitDatasets load_dataset(const DatasetManifest& manifest, const ApplianceSpec& spec, std::size_t window_len,
                           std::size_t train_stride, std::size_t eval_stride, AlignOptions opts = {});

}  // namespace nilm
