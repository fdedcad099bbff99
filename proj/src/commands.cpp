#include "nilm/commands.hpp"

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <numeric>

#include <CLI11.hpp>

#ifdef __GLIBC__
#include <malloc.h>
#endif

#include "nilm/checkpoint.hpp"
#include "nilm/data.hpp"
#include "nilm/errors.hpp"
#include "nilm/gradcheck.hpp"
#include "nilm/hash.hpp"
#include "nilm/metrics.hpp"
#include "nilm/ops.hpp"

namespace nilm {

std::filesystem::path resolve_out_dir(const RunConfig& cfg) {
    if (const char* env = std::getenv("NILM_OUT_DIR"); env && *env) return env;
    return cfg.get("out_dir");
}

ModelConfig model_config_from(const RunConfig& cfg, const AttentionMode& mode) {
    ModelConfig mc;
    mc.window_len = cfg.get_size("window_len");
    mc.hidden = cfg.get_size("hidden");
    mc.layers = cfg.get_size("layers");
    mc.heads = cfg.get_size("heads");
    if (cfg.has("dropout")) mc.dropout = cfg.get_double("dropout");
    mc.mode = mode;
    mc.seed = cfg.get_u64("seed");
    try {
        mc.validate();
    } catch (const Error& e) {
        throw UsageError(e.what());
    }
    return mc;
}

TrainConfig train_config_from(const RunConfig& cfg) {
    TrainConfig tc;
    tc.epochs = cfg.get_size("epochs");
    tc.batch_size = cfg.get_size("batch_size");
    tc.loss.kl_weight = cfg.get_double("kl_weight");
    tc.loss.margin_weight = cfg.get_double("margin_weight");
    tc.loss.l1_on_weight = cfg.get_double("l1_on_weight");
    tc.masking.ratio = cfg.get_double("mask_ratio");
    tc.masking.mask_value = cfg.get_double("mask_value");
    tc.optim.lr = cfg.get_double("lr");
    tc.optim.beta1 = cfg.get_double("beta1");
    tc.optim.beta2 = cfg.get_double("beta2");
    tc.optim.eps = cfg.get_double("adam_eps");
    tc.optim.weight_decay = cfg.get_double("weight_decay");
    tc.clip_norm = cfg.get_double("clip_norm");
    tc.record_wall_clock = cfg.get_bool("record_wall_clock");
    try {
        tc.loss.validate();
        tc.masking.validate();
    } catch (const DomainError& e) {
        throw UsageError(e.what());
    }
    if (tc.batch_size == 0) throw UsageError("batch_size must be positive");
    return tc;
}

namespace {

std::ofstream open_output(const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::trunc | std::ios::binary);
    if (!out) throw DataError("cannot write " + path.string());
    return out;
}

std::filesystem::path prepare_out_dir(const RunConfig& cfg) {
    const auto dir = resolve_out_dir(cfg);
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw DataError("cannot create output directory " + dir.string() + ": " + ec.message());
    return dir;
}

void write_resolved(const std::filesystem::path& dir, const RunConfig& cfg) {
    auto out = open_output(dir / "config.resolved");
    out << "# config_hash=" << cfg.hash_hex() << '\n' << cfg.canonical();
}

SplitDatasets load_for(const RunConfig& cfg, const std::string& appliance) {
    const std::string& data = cfg.get("data");
    if (data.empty()) throw DataError("no dataset given; set data=<manifest.json>");
    const DatasetManifest manifest = DatasetManifest::load(data);
    const std::size_t L = cfg.get_size("window_len");
    std::size_t train_stride = cfg.get_size("train_stride");
    std::size_t eval_stride = cfg.get_size("eval_stride");
    if (train_stride == 0) train_stride = std::max<std::size_t>(1, L / 2);
    if (eval_stride == 0) eval_stride = L;
    AlignOptions opts;
    opts.max_gap_sec = static_cast<std::int64_t>(cfg.get_u64("max_gap"));
    return load_dataset(manifest, default_appliance_spec(appliance), L, train_stride, eval_stride, opts);
}

const WindowedDataset& pick_split(const SplitDatasets& ds, const std::string& split) {
    if (split == "train") return ds.train;
    if (split == "test") return ds.test;
    throw UsageError("split must be 'train' or 'test', got '" + split + "'");
}

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::string fraction_text(double c) {
    for (int d : {2, 4, 8})
        if (c * d == 1.0) return "1/" + std::to_string(d);
    return format_double(c);
}

}  // namespace

// ---- ablation variants ----------------------------------------------------

std::vector<AttentionMode> ablation_variants() {
    std::vector<AttentionMode> v = {AttentionMode::standard()};
    for (double c : {1.0, 1.0 / 8, 1.0 / 4, 1.0 / 2, 2.0, 4.0, 8.0}) v.push_back(AttentionMode::fixed(c));
    v.push_back(AttentionMode::learned_raw());
    v.push_back(AttentionMode::meta());
    return v;
}

std::string ablation_label(const AttentionMode& mode) {
    switch (mode.variant) {
        case AttentionVariant::Standard:
            return "standard";
        case AttentionVariant::DiagMaskedFixedTau:
            return "masked_tau=" + fraction_text(mode.multiplier) + "*sqrt(dk)";
        case AttentionVariant::DiagMaskedLearnedRawTau:
            return "masked_raw_tau";
        case AttentionVariant::DiagMaskedMetaTau:
            return "masked_meta_tau";
    }
    return mode.to_string();
}

// ---- train ----------------------------------------------------------------

int cmd_train(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
    const AttentionMode mode = AttentionMode::parse(cfg.get("mode"));
    const ModelConfig mc = model_config_from(cfg, mode);
    const TrainConfig tc = train_config_from(cfg);
    const std::string appliance = cfg.get("appliance");
    const SplitDatasets ds = load_for(cfg, appliance);

    const auto dir = prepare_out_dir(cfg);
    write_resolved(dir, cfg);
    auto log = open_output(dir / "epoch_log.csv");
    log << "# config_hash=" << cfg.hash_hex() << '\n';
    write_epoch_log_header(log, mc.layers);

    err << "training " << appliance << " (" << mode.to_string() << "): " << ds.train.size() << " windows, "
        << tc.epochs << " epochs\n";
    const TrainResult r = train(NilmModel::init(mc), ds.train, tc, SeededRng(mc.seed, 0x747261696eULL),
                                [&](const EpochLog& row) {
                                    write_epoch_log_row(log, row);
                                    log.flush();
                                    if (row.guard_events > 0) {
                                        err << "epoch " << row.epoch << ": raw tau guard fired " << row.guard_events
                                            << " times\n";
                                    }
                                });

    std::map<std::string, std::string> meta = {
        {"config_hash", cfg.hash_hex()},
        {"appliance", appliance},
        {"data_hash", to_hex(ds.train.content_hash())},
        {"norm_mean", format_double(ds.train.stats.mean)},
        {"norm_std", format_double(ds.train.stats.std)},
        {"norm_cutoff", format_double(ds.train.stats.cutoff)},
        {"epochs_completed", std::to_string(r.log.size())},
    };
    save_checkpoint(dir / "checkpoint.nilm", r.model, meta);
    if (r.diverged) {
        err << "numeric divergence: " << r.divergence << "; last good model saved\n";
        return kExitDivergence;
    }
    if (!r.log.empty()) {
        out << "final epoch " << r.log.back().epoch << " loss " << format_double(r.log.back().total) << '\n';
    }
    out << "wrote " << (dir / "checkpoint.nilm").string() << '\n';
    return kExitOk;
}

// ---- eval -----------------------------------------------------------------

int cmd_eval(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
    const std::string ckpt = cfg.get("checkpoint");
    if (ckpt.empty()) throw UsageError("eval needs checkpoint=<file>");
    const AttentionMode mode = AttentionMode::parse(cfg.get("mode"));
    const ModelConfig requested = model_config_from(cfg, mode);
    const std::string split = cfg.get("split");
    if (split != "train" && split != "test") throw UsageError("split must be 'train' or 'test'");

    const Checkpoint ck = load_checkpoint(ckpt);
    if (architecture_hash(ck.model.config) != architecture_hash(requested)) {
        throw DataError("checkpoint architecture (" + ck.model.config.mode.to_string() + ", L=" +
                        std::to_string(ck.model.config.window_len) + ", hidden=" +
                        std::to_string(ck.model.config.hidden) + ") does not match the requested config");
    }
    const std::string appliance = cfg.get("appliance");
    const SplitDatasets ds = load_for(cfg, appliance);
    const WindowedDataset& data = pick_split(ds, split);
    if (data.size() == 0) throw DataError("split '" + split + "' has no windows for " + appliance);
    const Predictions pred = predict(ck.model, data, cfg.get_size("batch_size"));
    MetricsReport report = make_report(pred.power, pred.true_power, pred.status, pred.true_status);
    if (cfg.get_bool("mre_literal")) report.mre = mre_sum(pred.power, pred.true_power);
    if (report.degenerate_f1) err << "note: F1 undefined (no positives predicted or present); reported as 0\n";

    const auto dir = prepare_out_dir(cfg);
    nlohmann::ordered_json doc;
    doc["config_hash"] = cfg.hash_hex();
    doc["checkpoint"] = ckpt;
    doc["appliance"] = appliance;
    doc["split"] = split;
    doc["metrics"] = to_json(report);
    open_output(dir / "metrics.json") << doc.dump(2) << '\n';
    out << to_json(report).dump(2) << '\n';
    return kExitOk;
}

// ---- ablate ---------------------------------------------------------------

int cmd_ablate(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
    const TrainConfig tc = train_config_from(cfg);
    model_config_from(cfg, AttentionMode::standard());
    std::vector<std::string> appliances = cfg.get_list("appliances");
    if (appliances.empty()) {
        const std::string& data = cfg.get("data");
        if (data.empty()) throw DataError("no dataset given; set data=<manifest.json>");
        appliances = DatasetManifest::load(data).appliances();
        if (appliances.empty()) throw DataError("manifest lists no appliance channels");
    }
    std::vector<SplitDatasets> sets;
    Fnv1a data_hash;
    for (const auto& a : appliances) {
        sets.push_back(load_for(cfg, a));
        if (sets.back().test.size() == 0) throw DataError("no test windows for " + a);
        data_hash.str(a).u64(sets.back().train.content_hash()).u64(sets.back().test.content_hash());
    }

    const auto dir = prepare_out_dir(cfg);
    write_resolved(dir, cfg);
    auto csv = open_output(dir / "ablation.csv");
    csv << "# config_hash=" << cfg.hash_hex() << '\n' << "variant,data_hash";
    for (const auto& a : appliances) csv << ',' << a << "_acc," << a << "_f1," << a << "_mre," << a << "_mae";
    csv << ",status\n";

    for (const AttentionMode& mode : ablation_variants()) {
        const ModelConfig mc = model_config_from(cfg, mode);
        std::string row = ablation_label(mode) + "," + to_hex(data_hash.value());
        std::string status = "ok";
        for (std::size_t i = 0; i < appliances.size(); ++i) {
            err << "ablate " << ablation_label(mode) << " / " << appliances[i] << '\n';
            try {
                const TrainResult r = train(NilmModel::init(mc), sets[i].train, tc, SeededRng(mc.seed, 0x747261696eULL));
                if (r.diverged) {
                    status = "diverged(" + appliances[i] + ")";
                    row += ",,,,";
                    continue;
                }
                const MetricsReport m = evaluate(r.model, sets[i].test, tc.batch_size);
                row += "," + format_double(m.acc) + "," + format_double(m.f1) + "," + format_double(m.mre) + "," +
                       format_double(m.mae);
            } catch (const Error& e) {
                status = "error(" + appliances[i] + ")";
                err << "  failed: " << e.what() << '\n';
                row += ",,,,";
            }
        }
        csv << row << ',' << status << '\n';
        csv.flush();
        out << row << ',' << status << '\n';
    }
    return kExitOk;
}

// ---- bench ----------------------------------------------------------------

std::vector<BenchRow> run_bench(const ModelConfig& base, std::size_t batch, std::size_t reps, std::size_t warmup,
                                std::uint64_t seed) {
    if (reps == 0 || batch == 0) throw UsageError("bench needs reps > 0 and batch_size > 0");
    std::vector<BenchRow> rows = {
        {"standard", AttentionMode::standard(), 0.0, 0.0, {}},
        {"masking", AttentionMode::fixed(1.0), 0.0, 0.0, {}},
        {"masking+fixed_tau", AttentionMode::fixed(0.5), 0.0, 0.0, {}},
        {"masking+raw_tau", AttentionMode::learned_raw(), 0.0, 0.0, {}},
        {"masking+meta_tau", AttentionMode::meta(), 0.0, 0.0, {}},
    };
    SeededRng rng(seed, 0x62656e6368ULL);
    Tensor input({batch, base.window_len});
    for (double& v : input.data()) v = rng.normal();

    // Every variant shares the same weights and tokens, and the meta-network
    // is set to emit tau = sqrt(d_k) like the plain masked row. Downstream
    // activations are then identical, so value-dependent costs (exp, erf)
    // cancel and only the attention mechanics differ.
    ModelConfig mc = base;
    mc.mode = AttentionMode::meta();
    mc.seed = seed;
    NilmModel shared = NilmModel::init(mc);
    for (auto& layer : shared.layers) {
        layer.meta->w2.fill(0.0);
        layer.meta->b2[0] = -std::log(8.0);
    }
    const Tensor tokens = embed(input, shared, false, SeededRng()).tokens;
    std::vector<NilmModel> models;
    for (const auto& r : rows) {
        NilmModel m = shared;
        m.config.mode = r.mode;
        if (!r.mode.uses_meta())
            for (auto& layer : m.layers) layer.meta.reset();
        models.push_back(std::move(m));
    }
    std::vector<std::vector<double>> samples(rows.size());
    volatile double sink = 0.0;
#ifdef __GLIBC__
    // Keep freed score matrices in the heap instead of returning them to the
    // OS; otherwise page faults dominate the timing noise.
    mallopt(M_MMAP_THRESHOLD, 64 << 20);
    mallopt(M_TRIM_THRESHOLD, 256 << 20);
#endif
    std::vector<std::size_t> order(rows.size());
    std::iota(order.begin(), order.end(), 0);
    SeededRng order_rng = rng.split(1);
    for (std::size_t rep = 0; rep < warmup + reps; ++rep) {
        // A fresh random order each round, so no variant always follows the same one.
        for (std::size_t i = order.size() - 1; i > 0; --i) std::swap(order[i], order[order_rng.below(i + 1)]);
        for (const std::size_t v : order) {
            const auto t0 = std::chrono::steady_clock::now();
            const EncodeResult e = encode(tokens, models[v], false, SeededRng());
            const auto t1 = std::chrono::steady_clock::now();
            sink = sink + e.encoded[0];
            if (rep >= warmup) samples[v].push_back(std::chrono::duration<double>(t1 - t0).count());
        }
    }
    for (std::size_t v = 0; v < rows.size(); ++v) {
        rows[v].samples = std::move(samples[v]);
        rows[v].seconds = median(rows[v].samples);
    }
    for (auto& r : rows) r.ratio = paired_ratio(r, rows.front());
    return rows;
}

double paired_ratio(const BenchRow& a, const BenchRow& b) {
    if (a.samples.size() != b.samples.size() || a.samples.empty())
        throw ShapeError("paired_ratio: rows have different sample counts");
    std::vector<double> r(a.samples.size());
    for (std::size_t i = 0; i < r.size(); ++i) r[i] = a.samples[i] / b.samples[i];
    return median(r);
}

int cmd_bench(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
    const ModelConfig mc = model_config_from(cfg, AttentionMode::standard());
    const std::size_t reps = cfg.get_size("reps");
    if (reps < 1) throw UsageError("reps must be positive");
    const auto rows = run_bench(mc, cfg.get_size("batch_size"), reps, cfg.get_size("warmup"), mc.seed);
    const auto dir = prepare_out_dir(cfg);
    auto csv = open_output(dir / "bench.csv");
    csv << "# config_hash=" << cfg.hash_hex() << '\n';
    for (std::ostream* o : {static_cast<std::ostream*>(&csv), &out}) {
        *o << "type,mode,seconds,ratio\n";
        for (const auto& r : rows) {
            *o << r.type << ',' << r.mode.to_string() << ',' << format_double(r.seconds) << ','
               << format_double(r.ratio) << '\n';
        }
    }
    err << "median of " << reps << " interleaved repetitions, single thread\n";
    return kExitOk;
}

// ---- inspect --------------------------------------------------------------

int cmd_inspect(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
    std::vector<double> x = cfg.get_double_list("x");
    if (x.empty()) x = default_smoothing_logits();
    const std::vector<double> dk = cfg.get_double_list("dk");
    for (double d : dk)
        if (!(d > 0.0)) throw UsageError("dk values must be positive");
    const auto dir = prepare_out_dir(cfg);
    const std::string tag = "# config_hash=" + cfg.hash_hex() + "\n";
    {
        auto csv = open_output(dir / "smoothing.csv");
        csv << tag;
        write_smoothing_csv(csv, smoothing_study(x, dk));
    }
    out << "wrote " << (dir / "smoothing.csv").string() << '\n';

    const std::string ckpt = cfg.get("checkpoint");
    if (ckpt.empty()) return kExitOk;
    const Checkpoint ck = load_checkpoint(ckpt);
    const ModelConfig& mc = ck.model.config;
    RunConfig data_cfg = cfg;
    data_cfg.set("window_len", std::to_string(mc.window_len));
    const SplitDatasets ds = load_for(data_cfg, cfg.get("appliance"));
    const WindowedDataset& data = pick_split(ds, cfg.get("split"));
    const std::size_t w = cfg.get_size("window");
    if (w >= data.size()) throw DataError("window " + std::to_string(w) + " out of range (" + std::to_string(data.size()) + " windows)");
    Tensor input({1, mc.window_len});
    for (std::size_t t = 0; t < mc.window_len; ++t) input(0, t) = data.aggregate(w, t);
    const ForwardResult fwd = forward(ck.model, input, false, SeededRng());

    auto att = open_output(dir / "attention.csv");
    auto tau = open_output(dir / "tau.csv");
    att << tag << "layer,head,row,col,value\n";
    tau << tag << "layer,tau_used,tau_raw,guard_fired\n";
    double max_diag = 0.0;
    for (std::size_t l = 0; l < mc.layers; ++l) {
        const AttentionTrace& tr = fwd.trace(0, l);
        tau << l + 1 << ',' << format_double(tr.tau_used) << ',' << format_double(tr.tau_raw) << ','
            << (tr.tau_guard_fired ? 1 : 0) << '\n';
        for (std::size_t h = 0; h < tr.heads.size(); ++h) {
            const Tensor& a = tr.heads[h].attention;
            for (std::size_t i = 0; i < a.dim(0); ++i) {
                max_diag = std::max(max_diag, a(i, i));
                for (std::size_t j = 0; j < a.dim(1); ++j)
                    att << l + 1 << ',' << h << ',' << i << ',' << j << ',' << format_double(a(i, j)) << '\n';
            }
        }
    }
    out << "wrote " << (dir / "attention.csv").string() << " and " << (dir / "tau.csv").string() << '\n';
    err << "mode " << mc.mode.to_string() << ", max diagonal attention " << format_double(max_diag) << '\n';
    return kExitOk;
}

// ---- synth ----------------------------------------------------------------

int cmd_synth(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
    SyntheticSpec base = SyntheticSpec::default_spec();
    std::vector<ApplianceArchetype> chosen;
    for (const auto& name : cfg.get_list("appliances")) {
        auto it = std::find_if(base.appliances.begin(), base.appliances.end(),
                               [&](const ApplianceArchetype& a) { return a.name == name; });
        if (it == base.appliances.end()) throw UsageError("no synthetic archetype for '" + name + "' (fridge, microwave)");
        chosen.push_back(*it);
    }
    if (chosen.empty()) throw UsageError("synth needs at least one appliance");
    base.appliances = chosen;
    base.duration_sec = static_cast<std::int64_t>(cfg.get_u64("duration"));
    base.aggregate_noise_std = cfg.get_double("noise");
    base.baseline_watts = cfg.get_double("baseline");
    const std::size_t houses = cfg.get_size("houses");
    if (houses == 0) throw UsageError("houses must be >= 1");
    const double test_fraction = cfg.get_double("test_fraction");
    if (!(test_fraction > 0.0 && test_fraction < 1.0)) throw UsageError("test_fraction must lie in (0, 1)");

    const auto dir = prepare_out_dir(cfg);
    DatasetManifest manifest;
    manifest.name = "synthetic";
    manifest.sample_period_sec = 1;
    const std::uint64_t seed = cfg.get_u64("seed");
    for (std::size_t h = 1; h <= houses; ++h) {
        SyntheticSpec spec = base;
        spec.seed = mix64(seed * 0x100000001b3ULL + h);
        const SyntheticHouse house = synth_generate(spec);
        const std::string sub = "house_" + std::to_string(h);
        std::filesystem::create_directories(dir / sub);
        HouseEntry entry;
        entry.id = static_cast<int>(h);
        entry.split = houses == 1 ? "time" : redd_protocol_split(entry.id);
        entry.test_fraction = test_fraction;
        write_redd_channel(dir / sub / "channel_1.dat", house.mains);
        entry.channels.push_back({sub + "/channel_1.dat", "mains"});
        for (std::size_t a = 0; a < house.appliances.size(); ++a) {
            const std::string file = sub + "/channel_" + std::to_string(a + 2) + ".dat";
            write_redd_channel(dir / file, house.appliances[a].second);
            entry.channels.push_back({file, house.appliances[a].first});
        }
        manifest.houses.push_back(std::move(entry));
    }
    nlohmann::ordered_json doc = manifest.to_json();
    doc["config_hash"] = cfg.hash_hex();
    open_output(dir / "manifest.json") << doc.dump(2) << '\n';
    out << "wrote " << (dir / "manifest.json").string() << '\n';
    err << houses << " house(s), " << base.duration_sec << " s each\n";
    return kExitOk;
}

// ---- gradcheck ------------------------------------------------------------

std::vector<GradcheckRow> gradcheck_model(const ModelConfig& config, std::size_t batch, const LossConfig& loss,
                                          const MaskingScheme& masking, double fd_eps) {
    NilmModel model = NilmModel::init(config);
    SeededRng rng(config.seed, 0x677261646bULL);
    Tensor input({batch, config.window_len}), target({batch, config.window_len}), status({batch, config.window_len});
    SeededRng data_rng = rng.split(0);
    for (double& v : input.data()) v = data_rng.normal();
    for (std::size_t i = 0; i < status.size(); ++i) {
        status[i] = data_rng.bernoulli(0.4) ? 1.0 : 0.0;
        target[i] = status[i] > 0.0 ? data_rng.uniform(0.2, 0.9) : data_rng.uniform(0.0, 0.05);
    }
    SeededRng mask_rng = rng.split(1);
    const MaskedBatch mb = apply_mask(input, masking, mask_rng);
    const SeededRng dropout_rng = rng.split(2);

    auto loss_of = [&](const NilmModel& m) {
        const ForwardResult f = forward(m, mb.input, true, dropout_rng);
        return compute_loss(f.power, target, f.status_logits, status, mb.mask, loss);
    };
    const ForwardResult fwd = forward(model, mb.input, true, dropout_rng);
    const LossResult lr = compute_loss(fwd.power, target, fwd.status_logits, status, mb.mask, loss);
    const NilmModel grads = backward(model, fwd, lr.grad_power, lr.grad_status);

    std::vector<const Tensor*> analytic;
    visit_model_params(grads, [&](const std::string&, const Tensor& t) { analytic.push_back(&t); });
    std::vector<GradcheckRow> rows;
    std::size_t k = 0;
    visit_model_params(model, [&](const std::string& name, Tensor& param) {
        const Tensor saved = param;
        const Tensor numeric = finite_diff_grad(
            [&](const Tensor& x) {
                param = x;
                const double v = loss_of(model).parts.total;
                param = saved;
                return v;
            },
            saved, fd_eps);
        rows.push_back({config.mode.to_string(), name, max_relative_error(*analytic[k++], numeric)});
    });
    return rows;
}

int cmd_gradcheck(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
    const double tol = cfg.get_double("tolerance");
    const double fd_eps = cfg.get_double("fd_eps");
    LossConfig loss;
    loss.kl_weight = cfg.get_double("kl_weight");
    loss.margin_weight = cfg.get_double("margin_weight");
    loss.l1_on_weight = cfg.get_double("l1_on_weight");
    MaskingScheme masking;
    masking.ratio = cfg.get_double("mask_ratio");
    masking.mask_value = cfg.get_double("mask_value");
    const auto dir = prepare_out_dir(cfg);
    auto csv = open_output(dir / "gradcheck.csv");
    csv << "# config_hash=" << cfg.hash_hex() << '\n' << "mode,parameter,max_rel_error\n";
    double worst = 0.0;
    for (const AttentionMode& mode : {AttentionMode::standard(), AttentionMode::fixed(1.0), AttentionMode::fixed(0.5),
                                      AttentionMode::learned_raw(), AttentionMode::meta()}) {
        const ModelConfig mc = model_config_from(cfg, mode);
        const auto rows = gradcheck_model(mc, cfg.get_size("batch_size"), loss, masking, fd_eps);
        double mode_worst = 0.0;
        for (const auto& r : rows) {
            csv << r.mode << ',' << r.parameter << ',' << format_double(r.max_rel_error) << '\n';
            mode_worst = std::max(mode_worst, r.max_rel_error);
        }
        out << mode.to_string() << ": " << rows.size() << " tensors, max relative error "
            << format_double(mode_worst) << '\n';
        worst = std::max(worst, mode_worst);
    }
    out << "overall max relative error " << format_double(worst) << (worst <= tol ? " (ok)" : " (FAILED)") << '\n';
    if (worst > tol) {
        err << "gradient check exceeded tolerance " << format_double(tol) << '\n';
        return kExitDivergence;
    }
    return kExitOk;
}

// ---- dispatch -------------------------------------------------------------

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Transformer energy disaggregation with diagonal-masked, temperature-adaptive attention", "nilm"};
    app.require_subcommand(1);
    struct Verb {
        CLI::App* app;
        std::string config;
        std::vector<std::string> sets;
        std::vector<std::pair<std::string, CLI::Option*>> flags;
        std::map<std::string, std::string> flag_values;
    };
    std::map<std::string, std::unique_ptr<Verb>> verbs;
    const std::map<std::string, std::string> about = {
        {"train", "train one appliance model"},
        {"eval", "evaluate a checkpoint"},
        {"ablate", "run the attention-variant ablation grid"},
        {"bench", "time the encoder under each attention variant"},
        {"inspect", "temperature smoothing table and attention dumps"},
        {"synth", "write a synthetic REDD-format dataset"},
        {"gradcheck", "compare analytic and finite-difference gradients"},
    };
    for (const auto& name : command_names()) {
        auto v = std::make_unique<Verb>();
        v->app = app.add_subcommand(name, about.at(name));
        v->app->add_option("-c,--config", v->config, "config file (key = value, [command] sections)");
        v->app->add_option("--set", v->sets, "override, key=value (repeatable)");
        for (const auto& k : config_keys()) {
            if (std::find(k.commands.begin(), k.commands.end(), name) == k.commands.end()) continue;
            std::string names = "--" + k.name;
            std::string dashed = k.name;
            std::replace(dashed.begin(), dashed.end(), '_', '-');
            if (dashed != k.name) names += ",--" + dashed;
            if (k.name == "out_dir") names += ",-o";
            v->flags.emplace_back(k.name, v->app->add_option(names, v->flag_values[k.name], k.help));
        }
        verbs[name] = std::move(v);
    }

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::ParseError& e) {
        app.exit(e, out, err);
        return kExitUsage;
    }

    try {
        for (const auto& [name, v] : verbs) {
            if (!v->app->parsed()) continue;
            RunConfig cfg(name);
            if (!v->config.empty()) cfg.merge_file(v->config);
            for (const auto& s : v->sets) cfg.set_assignment(s);
            for (const auto& [key, opt] : v->flags)
                if (opt->count() > 0) cfg.set(key, v->flag_values[key]);
            if (name == "train") return cmd_train(cfg, out, err);
            if (name == "eval") return cmd_eval(cfg, out, err);
            if (name == "ablate") return cmd_ablate(cfg, out, err);
            if (name == "bench") return cmd_bench(cfg, out, err);
            if (name == "inspect") return cmd_inspect(cfg, out, err);
            if (name == "synth") return cmd_synth(cfg, out, err);
            if (name == "gradcheck") return cmd_gradcheck(cfg, out, err);
        }
    } catch (const UsageError& e) {
        err << "usage error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const NumericError& e) {
        err << "numeric error: " << e.what() << '\n';
        return kExitDivergence;
    } catch (const Error& e) {
        err << "error: " << e.what() << '\n';
        return kExitData;
    } catch (const std::filesystem::filesystem_error& e) {
        err << "error: " << e.what() << '\n';
        return kExitData;
    }
    return kExitUsage;
}

}  // namespace nilm
