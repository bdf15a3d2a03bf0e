#include "tanglefl/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <thread>
#include <unordered_map>

#include "tanglefl/simd/kernels.hpp"

namespace tanglefl::experiment {

namespace fs = std::filesystem;
using nlohmann::json;

AdversarySpec parse_adversary_spec(const std::string& s) {
    const std::size_t colon = s.rfind(':');
    if (colon == std::string::npos || colon + 1 >= s.size()) {
        throw InvalidConfig("adversary", "expected kind:count, got `" + s + "`");
    }
    AdversarySpec spec;
    try {
        spec.kind = sim::adversary_kind_from_string(s.substr(0, colon));
        spec.count = std::stoull(s.substr(colon + 1));
    } catch (const std::exception& e) {
        throw InvalidConfig("adversary", e.what());
    }
    return spec;
}

namespace {

template <typename T>
void assign_field(const json& j, const std::string& key, T& target) {
    try {
        target = j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw InvalidConfig(key, e.what());
    }
}

void apply_json(ExperimentConfig& cfg, const json& j) {
    if (j.is_null()) return;
    if (!j.is_object()) throw InvalidConfig("config", "document must be a JSON object");
    for (const auto& [key, value] : j.items()) {
        if (key == "exp_id") assign_field(j, key, cfg.exp_id);
        else if (key == "rounds") assign_field(j, key, cfg.rounds);
        else if (key == "repeats") assign_field(j, key, cfg.repeats);
        else if (key == "n_clients") assign_field(j, key, cfg.n_clients);
        else if (key == "milestone_interval_s") assign_field(j, key, cfg.milestone_interval_s);
        else if (key == "alpha") assign_field(j, key, cfg.alpha);
        else if (key == "penalty_alpha") assign_field(j, key, cfg.penalty_alpha);
        else if (key == "threshold") assign_field(j, key, cfg.threshold);
        else if (key == "initial_reputation") assign_field(j, key, cfg.initial_reputation);
        else if (key == "seed") assign_field(j, key, cfg.seed);
        else if (key == "out_dir") assign_field(j, key, cfg.out_dir);
        else if (key == "format") assign_field(j, key, cfg.format);
        else if (key == "input_dim") assign_field(j, key, cfg.input_dim);
        else if (key == "hidden_dim") assign_field(j, key, cfg.hidden_dim);
        else if (key == "n_classes") assign_field(j, key, cfg.n_classes);
        else if (key == "total_samples") assign_field(j, key, cfg.total_samples);
        else if (key == "validation_samples") assign_field(j, key, cfg.validation_samples);
        else if (key == "non_iid_alpha") assign_field(j, key, cfg.non_iid_alpha);
        else if (key == "epochs") assign_field(j, key, cfg.epochs);
        else if (key == "batch_size") assign_field(j, key, cfg.batch_size);
        else if (key == "learning_rate") assign_field(j, key, cfg.learning_rate);
        else if (key == "dataset_csv") assign_field(j, key, cfg.dataset_csv);
        else if (key == "collection_window_s") assign_field(j, key, cfg.collection_window_s);
        else if (key == "base_compute_s") assign_field(j, key, cfg.base_compute_s);
        else if (key == "compute_jitter_sigma") assign_field(j, key, cfg.compute_jitter_sigma);
        else if (key == "net_delay_s") assign_field(j, key, cfg.net_delay_s);
        else if (key == "bus_latency_s") assign_field(j, key, cfg.bus_latency_s);
        else if (key == "gossip_latency_s") assign_field(j, key, cfg.gossip_latency_s);
        else if (key == "pow_cost_s") assign_field(j, key, cfg.pow_cost_s);
        else if (key == "rate_cap_blocks_per_s") assign_field(j, key, cfg.rate_cap_blocks_per_s);
        else if (key == "ledger_nodes") assign_field(j, key, cfg.ledger_nodes);
        else if (key == "quorum") assign_field(j, key, cfg.quorum);
        else if (key == "reputation_enabled") assign_field(j, key, cfg.reputation_enabled);
        else if (key == "kernel_backend") assign_field(j, key, cfg.kernel_backend);
        else if (key == "span_mode") assign_field(j, key, cfg.span_mode);
        else if (key == "jobs") assign_field(j, key, cfg.jobs);
        else if (key == "adversaries") {
            if (!value.is_array()) throw InvalidConfig(key, "must be an array of kind:count");
            cfg.adversaries.clear();
            for (const auto& item : value) {
                cfg.adversaries.push_back(parse_adversary_spec(item.get<std::string>()));
            }
        } else {
            throw InvalidConfig(key, "unknown config key");
        }
    }
}

} // namespace

ExperimentConfig config_from_json(const json& file_values, const json& overrides) {
    ExperimentConfig cfg;
    bool penalty_alpha_set =
        (file_values.is_object() && file_values.contains("penalty_alpha")) ||
        (overrides.is_object() && overrides.contains("penalty_alpha"));
    apply_json(cfg, file_values);
    apply_json(cfg, overrides);
    if (!penalty_alpha_set) cfg.penalty_alpha = cfg.alpha;
    validate_config(cfg);
    return cfg;
}

void validate_config(const ExperimentConfig& cfg) {
    auto positive_count = [](const char* name, std::uint64_t v) {
        if (v < 1) throw InvalidConfig(name, "must be >= 1");
    };
    positive_count("rounds", cfg.rounds);
    positive_count("repeats", cfg.repeats);
    positive_count("n_clients", cfg.n_clients);
    positive_count("epochs", cfg.epochs);
    positive_count("batch_size", cfg.batch_size);
    positive_count("input_dim", cfg.input_dim);
    positive_count("hidden_dim", cfg.hidden_dim);
    positive_count("ledger_nodes", cfg.ledger_nodes);
    positive_count("jobs", cfg.jobs);
    positive_count("validation_samples", cfg.validation_samples);
    if (cfg.n_classes < 2) throw InvalidConfig("n_classes", "must be >= 2");
    if (cfg.total_samples < cfg.n_clients) {
        throw InvalidConfig("total_samples", "must cover at least one sample per client");
    }
    if (!(cfg.milestone_interval_s > 0.0)) {
        throw InvalidConfig("milestone_interval_s", "must be > 0");
    }
    if (!(cfg.collection_window_s > 0.0)) {
        throw InvalidConfig("collection_window_s", "must be > 0");
    }
    auto unit_range = [](const char* name, double v) {
        if (v < 0.0 || v > 1.0) throw InvalidConfig(name, "must be in [0,1]");
    };
    unit_range("alpha", cfg.alpha);
    unit_range("penalty_alpha", cfg.penalty_alpha);
    unit_range("threshold", cfg.threshold);
    unit_range("initial_reputation", cfg.initial_reputation);
    if (cfg.learning_rate < 0.0) throw InvalidConfig("learning_rate", "must be >= 0");
    if (!(cfg.non_iid_alpha > 0.0)) throw InvalidConfig("non_iid_alpha", "must be > 0");
    auto nonneg = [](const char* name, double v) {
        if (v < 0.0) throw InvalidConfig(name, "must be >= 0");
    };
    nonneg("base_compute_s", cfg.base_compute_s);
    nonneg("compute_jitter_sigma", cfg.compute_jitter_sigma);
    nonneg("net_delay_s", cfg.net_delay_s);
    nonneg("bus_latency_s", cfg.bus_latency_s);
    nonneg("gossip_latency_s", cfg.gossip_latency_s);
    nonneg("pow_cost_s", cfg.pow_cost_s);
    nonneg("rate_cap_blocks_per_s", cfg.rate_cap_blocks_per_s);
    if (cfg.quorum > cfg.n_clients) throw InvalidConfig("quorum", "exceeds n_clients");
    if (cfg.format != "structured" && cfg.format != "csv") {
        throw InvalidConfig("format", "must be structured or csv");
    }
    if (cfg.span_mode != "activity" && cfg.span_mode != "wall") {
        throw InvalidConfig("span_mode", "must be activity or wall");
    }
    if (cfg.kernel_backend != "auto" && cfg.kernel_backend != "scalar" &&
        cfg.kernel_backend != "avx2") {
        throw InvalidConfig("kernel_backend", "must be auto, scalar, or avx2");
    }
    std::uint64_t adversary_total = 0;
    for (const auto& a : cfg.adversaries) adversary_total += a.count;
    if (adversary_total > cfg.n_clients) {
        throw InvalidConfig("adversary", "more adversaries than clients");
    }
    if (cfg.exp_id.empty()) throw InvalidConfig("exp_id", "must not be empty");
}

json config_to_json(const ExperimentConfig& cfg) {
    json j;
    j["exp_id"] = cfg.exp_id;
    j["rounds"] = cfg.rounds;
    j["repeats"] = cfg.repeats;
    j["n_clients"] = cfg.n_clients;
    j["milestone_interval_s"] = cfg.milestone_interval_s;
    j["alpha"] = cfg.alpha;
    j["penalty_alpha"] = cfg.penalty_alpha;
    j["threshold"] = cfg.threshold;
    j["initial_reputation"] = cfg.initial_reputation;
    j["seed"] = cfg.seed;
    json advs = json::array();
    for (const auto& a : cfg.adversaries) {
        advs.push_back(std::string(sim::to_string(a.kind)) + ":" + std::to_string(a.count));
    }
    j["adversaries"] = advs;
    j["out_dir"] = cfg.out_dir;
    j["format"] = cfg.format;
    j["input_dim"] = cfg.input_dim;
    j["hidden_dim"] = cfg.hidden_dim;
    j["n_classes"] = cfg.n_classes;
    j["total_samples"] = cfg.total_samples;
    j["validation_samples"] = cfg.validation_samples;
    j["non_iid_alpha"] = cfg.non_iid_alpha;
    j["epochs"] = cfg.epochs;
    j["batch_size"] = cfg.batch_size;
    j["learning_rate"] = cfg.learning_rate;
    j["dataset_csv"] = cfg.dataset_csv;
    j["collection_window_s"] = cfg.collection_window_s;
    j["base_compute_s"] = cfg.base_compute_s;
    j["compute_jitter_sigma"] = cfg.compute_jitter_sigma;
    j["net_delay_s"] = cfg.net_delay_s;
    j["bus_latency_s"] = cfg.bus_latency_s;
    j["gossip_latency_s"] = cfg.gossip_latency_s;
    j["pow_cost_s"] = cfg.pow_cost_s;
    j["rate_cap_blocks_per_s"] = cfg.rate_cap_blocks_per_s;
    j["ledger_nodes"] = cfg.ledger_nodes;
    j["quorum"] = cfg.quorum;
    j["reputation_enabled"] = cfg.reputation_enabled;
    j["kernel_backend"] = cfg.kernel_backend;
    j["span_mode"] = cfg.span_mode;
    j["jobs"] = cfg.jobs;
    return j;
}

void write_text_file(const std::string& path, const std::string& content) {
    fs::create_directories(fs::path(path).parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw std::runtime_error("failed to write " + path);
}

std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("failed to read " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

namespace {

std::vector<std::uint8_t> encode_global_msg(std::uint64_t round,
                                            const std::vector<std::uint8_t>& blob) {
    std::vector<std::uint8_t> out;
    out.reserve(8 + blob.size());
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(round >> (8 * i)));
    out.insert(out.end(), blob.begin(), blob.end());
    return out;
}

std::pair<std::uint64_t, std::vector<std::uint8_t>> decode_global_msg(
    const std::vector<std::uint8_t>& bytes) {
    if (bytes.size() < 8) throw std::runtime_error("short global message");
    std::uint64_t round = 0;
    for (int i = 7; i >= 0; --i) round = (round << 8) | bytes[i];
    return {round, std::vector<std::uint8_t>(bytes.begin() + 8, bytes.end())};
}

std::string device_name(std::uint64_t i) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "dev%03llu", static_cast<unsigned long long>(i));
    return buf;
}

struct ConfirmationTracker {
    std::vector<metrics::ConfirmationSample> samples;
    std::unordered_map<std::string, std::size_t> index;

    void on_submit(const std::string& hex, double t) {
        auto [it, inserted] = index.try_emplace(hex, samples.size());
        if (!inserted) return;
        samples.push_back({hex, t, -1.0});
    }
    void on_confirm(const std::string& hex, double t) {
        auto it = index.find(hex);
        if (it == index.end()) return;
        auto& s = samples[it->second];
        if (!s.confirmed()) s.confirm_s = t;
    }
    bool all_confirmed() const {
        for (const auto& s : samples) {
            if (!s.confirmed()) return false;
        }
        return true;
    }
};

std::string format_g17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

} // namespace

RepeatOutput run_repeat(const ExperimentConfig& cfg, std::uint64_t repeat_index,
                        const std::string& artifacts_dir) {
    const std::uint64_t repeat_seed = derive_seed(cfg.seed, "repeat", repeat_index);

    // Data: synthetic clusters by default, CSV ingestion when configured.
    fl::SyntheticDataset data;
    if (cfg.dataset_csv.empty()) {
        fl::SyntheticConfig scfg;
        scfg.n_clients = cfg.n_clients;
        scfg.non_iid_alpha = cfg.non_iid_alpha;
        scfg.n_classes = cfg.n_classes;
        scfg.input_dim = cfg.input_dim;
        scfg.total_samples = cfg.total_samples;
        scfg.validation_samples = cfg.validation_samples;
        data = fl::make_synthetic_dataset(derive_seed(repeat_seed, "data"), scfg);
    } else {
        const fl::DataShard full = fl::load_csv_dataset(cfg.dataset_csv);
        if (full.size() <= cfg.validation_samples) {
            throw InvalidConfig("validation_samples", "dataset too small for the split");
        }
        const std::size_t train_n = full.size() - cfg.validation_samples;
        fl::DataShard train, val;
        train.input_dim = val.input_dim = full.input_dim;
        for (std::size_t i = 0; i < full.size(); ++i) {
            fl::DataShard& dst = i < train_n ? train : val;
            dst.labels.push_back(full.labels[i]);
            dst.features.insert(dst.features.end(), full.row(i),
                                full.row(i) + full.input_dim);
        }
        data.shards = fl::partition_dirichlet(train, cfg.n_clients, cfg.non_iid_alpha,
                                              derive_seed(repeat_seed, "data"));
        data.validation = std::move(val);
    }

    fl::Shapes shapes = cfg.shapes();
    if (!cfg.dataset_csv.empty()) {
        shapes.input_dim = data.validation.input_dim;
        std::uint32_t n_classes = 0;
        for (auto y : data.validation.labels) n_classes = std::max(n_classes, y + 1);
        for (const auto& s : data.shards) {
            for (auto y : s.labels) n_classes = std::max(n_classes, y + 1);
        }
        shapes.output_dim = n_classes;
    }

    // World.
    sim::SimClock clock;
    sim::TopicBus bus(clock, cfg.bus_latency_s);
    std::vector<std::vector<double>> latency(
        cfg.ledger_nodes, std::vector<double>(cfg.ledger_nodes, cfg.gossip_latency_s));
    for (std::size_t i = 0; i < cfg.ledger_nodes; ++i) latency[i][i] = 0.0;
    dag::LedgerFabric fabric(clock, cfg.ledger_nodes, latency);
    store::BlobStore blobs = artifacts_dir.empty()
                                 ? store::BlobStore()
                                 : store::BlobStore(artifacts_dir + "/blobs");
    dapp::DeviceRegistry registry;
    trust::ReputationTable reputation(cfg.initial_reputation);
    sim::EventLog log;

    const std::size_t adapter_node = 0;
    const std::size_t coord_node = cfg.ledger_nodes - 1;

    dapp::PipelineConfig pcfg;
    pcfg.seed = repeat_seed;
    pcfg.shapes = shapes;
    pcfg.alpha = cfg.alpha;
    pcfg.penalty_alpha = cfg.penalty_alpha;
    pcfg.threshold = cfg.threshold;
    pcfg.initial_reputation = cfg.initial_reputation;
    pcfg.quorum = cfg.resolved_quorum();
    pcfg.pow_cost_s = cfg.pow_cost_s;
    pcfg.rate_cap_blocks_per_s = cfg.rate_cap_blocks_per_s;
    pcfg.reputation_enabled = cfg.reputation_enabled;
    pcfg.adapter_node = adapter_node;
    dapp::DappManager manager(clock, fabric, blobs, registry, reputation,
                              data.validation, pcfg, &log);
    manager.set_initial_global(fl::init_model(derive_seed(repeat_seed, "init"), shapes));

    ConfirmationTracker tracker;
    fabric.set_attach_hook([&](std::size_t node, const dag::Block& b) {
        if (node == adapter_node && dapp::is_anchor_payload(b.payload)) {
            tracker.on_submit(b.id.hex(), b.issued_at_s());
        }
    });
    fabric.set_confirm_hook(
        [&](std::size_t node, std::uint64_t ms_index, const dag::BlockId& id, double t) {
            if (node != coord_node) return;
            if (!dapp::is_anchor_payload(fabric.node(node).block(id).payload)) return;
            tracker.on_confirm(id.hex(), t);
            log.add(t, "coordinator", "confirm",
                    "block=" + id.hex() + " ms=" + std::to_string(ms_index));
        });

    // Devices: adversaries take the tail of the id range, spec order.
    std::vector<sim::DeviceProfile> devices(cfg.n_clients);
    {
        std::vector<sim::AdversaryKind> kinds(cfg.n_clients, sim::AdversaryKind::none);
        std::size_t cursor = cfg.n_clients;
        for (const auto& spec : cfg.adversaries) {
            for (std::uint64_t k = 0; k < spec.count; ++k) kinds[--cursor] = spec.kind;
        }
        for (std::uint64_t i = 0; i < cfg.n_clients; ++i) {
            auto& dev = devices[i];
            dev.device_id = device_name(i);
            dev.credential = "psk-" + dev.device_id;
            dev.base_compute_s = cfg.base_compute_s;
            dev.compute_jitter_sigma = cfg.compute_jitter_sigma;
            dev.net_delay_s = cfg.net_delay_s;
            dev.adversary = kinds[i];
            dev.rng = Rng(derive_seed(repeat_seed, "device", i));
            registry.enroll(dev.device_id, dev.credential);
        }
    }

    const std::string update_topic_base = "fl/" + cfg.exp_id + "/updates/";
    const std::string global_topic_base = "fl/" + cfg.exp_id + "/global/";

    fl::TrainConfig base_train;
    base_train.epochs = cfg.epochs;
    base_train.batch_size = cfg.batch_size;
    base_train.learning_rate = cfg.learning_rate;

    auto device_round = [&](std::size_t i, std::uint64_t round,
                            const fl::ModelParams& global_params) {
        if (round > cfg.rounds) return;
        auto& dev = devices[i];
        const fl::DataShard& shard = data.shards[i];

        fl::ModelParams submitted;
        std::uint64_t claimed_round = round;
        switch (dev.adversary) {
            case sim::AdversaryKind::random_weights: {
                submitted.shapes = shapes;
                submitted.weights.resize(shapes.weight_count());
                for (auto& w : submitted.weights) w = dev.rng.uniform(-5.0, 5.0);
                break;
            }
            case sim::AdversaryKind::stale_round: {
                fl::TrainConfig tc = base_train;
                tc.seed = derive_seed(repeat_seed, "train-" + dev.device_id, round);
                submitted = fl::local_train(global_params, shard, tc).params;
                claimed_round = round - 1;
                break;
            }
            default: {
                fl::TrainConfig tc = base_train;
                tc.seed = derive_seed(repeat_seed, "train-" + dev.device_id, round);
                submitted = fl::local_train(global_params, shard, tc).params;
                break;
            }
        }

        dapp::SubmissionEnvelope env;
        env.device_id = dev.device_id;
        env.credential = dev.credential;
        env.round = claimed_round;
        env.n_samples = shard.size();
        env.params_blob = fl::serialize_params(submitted);

        const double delay = dev.draw_compute_delay() + dev.net_delay_s;
        const bool spam = dev.adversary == sim::AdversaryKind::duplicate_spam;
        const std::string topic = update_topic_base + dev.device_id;
        auto payload = dapp::encode_envelope(env);
        clock.schedule_in(delay, [&bus, topic, payload, spam]() {
            bus.publish(topic, payload);
            if (spam) bus.publish(topic, payload);
        });
    };

    for (std::size_t i = 0; i < devices.size(); ++i) {
        bus.subscribe(global_topic_base + "+", [&, i](const sim::TopicMessage& msg) {
            auto [round, blob] = decode_global_msg(msg.payload);
            device_round(i, round + 1, fl::deserialize_params(blob));
        });
    }

    bus.subscribe(update_topic_base + "+", [&](const sim::TopicMessage& msg) {
        manager.enqueue_submission(dapp::decode_envelope(msg.payload));
    });

    manager.set_round_done_hook([&](const dapp::RoundResult& rr) {
        if (rr.round >= cfg.rounds) return;
        manager.open_round(rr.round + 1, clock.now() + cfg.collection_window_s,
                           cfg.n_clients);
        bus.publish(global_topic_base + std::to_string(rr.round),
                    encode_global_msg(rr.round,
                                      fl::serialize_params(manager.global_model())));
    });

    // Coordinator: one milestone per interval until all rounds are done and
    // every anchor is confirmed.
    dag::MilestoneSchedule schedule(cfg.milestone_interval_s);
    std::function<void()> milestone_tick = [&]() {
        const bool rounds_done = manager.round_results().size() >= cfg.rounds;
        if (rounds_done && tracker.all_confirmed()) return;
        const auto ms = schedule.issue(fabric, coord_node, "coordinator", clock.now());
        log.add(clock.now(), "coordinator", "milestone",
                "index=" + std::to_string(ms.index) +
                    " confirmed=" + std::to_string(ms.confirmed.size()));
        clock.schedule_in(cfg.milestone_interval_s, [&]() { milestone_tick(); });
    };
    clock.schedule(cfg.milestone_interval_s, [&]() { milestone_tick(); });

    // Kick off round 1.
    log.add(0.0, "runner", "start",
            "repeat=" + std::to_string(repeat_index) +
                " seed=" + std::to_string(repeat_seed));
    manager.open_round(1, cfg.collection_window_s, cfg.n_clients);
    bus.publish(global_topic_base + "0",
                encode_global_msg(0, fl::serialize_params(manager.global_model())));

    clock.run_all();

    if (!fabric.converged()) {
        throw std::logic_error("ledger nodes did not converge at quiescence");
    }
    if (!tracker.all_confirmed()) {
        throw std::logic_error("unconfirmed anchors after drain");
    }
    log.add(clock.now(), "runner", "end",
            "anchors=" + std::to_string(tracker.samples.size()));

    // Outputs.
    RepeatOutput out;
    out.rounds = manager.round_results();
    out.event_log = log.dump();
    out.ledger_snapshot =
        dag::write_snapshot(fabric.node(adapter_node).blocks_in_attach_order());
    out.reputation_csv = reputation.to_csv();
    out.final_accuracy = out.rounds.empty() ? 0.0 : out.rounds.back().validation_accuracy;
    for (const auto& [id, rec] : reputation.records()) {
        out.final_reputation[id] = rec.score;
        if (trust::classify(rec, cfg.threshold) == trust::Reliability::unreliable) {
            out.final_unreliable.push_back(id);
        }
    }

    out.perf.repeat = repeat_index;
    out.perf.seed = repeat_seed;
    out.perf.confirmed = tracker.samples.size();
    if (cfg.span_mode == "wall") {
        double last_confirm = 0.0;
        for (const auto& s : tracker.samples) {
            last_confirm = std::max(last_confirm, s.confirm_s);
        }
        out.perf.tps = metrics::compute_tps(tracker.samples, last_confirm);
        out.perf.span_s = last_confirm;
    } else {
        out.perf.tps = metrics::compute_tps(tracker.samples);
        double first_submit = tracker.samples.empty() ? 0.0 : tracker.samples[0].submit_s;
        double last_confirm = first_submit;
        for (const auto& s : tracker.samples) {
            first_submit = std::min(first_submit, s.submit_s);
            last_confirm = std::max(last_confirm, s.confirm_s);
        }
        out.perf.span_s = last_confirm - first_submit;
    }
    out.perf.delays_s = metrics::delay_samples(tracker.samples);

    if (!artifacts_dir.empty()) {
        write_text_file(artifacts_dir + "/events.log", out.event_log);
        write_text_file(artifacts_dir + "/ledger.snapshot", out.ledger_snapshot);
        write_text_file(artifacts_dir + "/reputation.csv", out.reputation_csv);

        std::string delays = "block,submit_us,confirm_us,delay_us\n";
        for (const auto& s : tracker.samples) {
            delays += s.block_hex;
            delays += ',';
            delays += std::to_string(sim::to_micros(s.submit_s));
            delays += ',';
            delays += std::to_string(sim::to_micros(s.confirm_s));
            delays += ',';
            delays += std::to_string(sim::to_micros(s.confirm_s) -
                                     sim::to_micros(s.submit_s));
            delays += '\n';
        }
        write_text_file(artifacts_dir + "/delays.csv", delays);

        json rep;
        rep["schema"] = "tanglefl-repeat-v1";
        rep["repeat"] = repeat_index;
        rep["seed"] = repeat_seed;
        rep["kernel_backend"] = simd::active_name();
        rep["tps"] = out.perf.tps;
        rep["confirmed"] = out.perf.confirmed;
        rep["span_s"] = out.perf.span_s;
        const auto q = metrics::delay_quantiles(out.perf.delays_s);
        rep["delay_quantiles"] = {{"p25", q.p25}, {"p50", q.p50}, {"p75", q.p75},
                                  {"max", q.max}};
        json rounds = json::array();
        for (const auto& rr : out.rounds) {
            json r;
            r["round"] = rr.round;
            r["quorum_met"] = rr.quorum_met;
            if (!rr.void_reason.empty()) r["void_reason"] = rr.void_reason;
            r["accepted"] = rr.accepted_devices;
            json rejections = json::array();
            for (const auto& [dev, reason] : rr.rejections) {
                rejections.push_back({{"device", dev}, {"reason", reason}});
            }
            r["rejections"] = rejections;
            json weights = json::object();
            for (const auto& [dev, w] : rr.weights) weights[dev] = w;
            r["weights"] = weights;
            r["unreliable"] = rr.unreliable_devices;
            r["validation_accuracy"] = rr.validation_accuracy;
            if (rr.quorum_met) {
                r["global_hash"] = rr.global_hash.hex();
                r["global_anchor"] = rr.global_anchor.hex();
                r["reputation_anchor"] = rr.reputation_anchor.hex();
            }
            rounds.push_back(std::move(r));
        }
        rep["rounds"] = std::move(rounds);
        rep["final_accuracy"] = out.final_accuracy;
        rep["final_reputation"] = out.final_reputation;
        rep["final_unreliable"] = out.final_unreliable;
        write_text_file(artifacts_dir + "/report.json", rep.dump(2) + "\n");
    }
    return out;
}

namespace {

json summary_from_report(const ExperimentConfig& cfg,
                         const metrics::MetricsReport& report,
                         const std::vector<RepeatOutput>& repeats) {
    json s;
    s["schema"] = "tanglefl-summary-v1";
    s["config"] = config_to_json(cfg);
    s["kernel_backend"] = simd::active_name();
    s["tps_samples"] = report.tps_samples;
    s["tps_mean"] = report.tps_mean;
    s["tps_std"] = report.tps_std;
    s["variability_pct"] = report.variability_pct;
    s["delay_quantiles"] = {{"p25", report.quantiles.p25},
                            {"p50", report.quantiles.p50},
                            {"p75", report.quantiles.p75},
                            {"max", report.quantiles.max}};
    s["n_delay_samples"] = report.n_delay_samples;
    json reps = json::array();
    for (const auto& r : repeats) {
        reps.push_back({{"repeat", r.perf.repeat},
                        {"seed", r.perf.seed},
                        {"tps", r.perf.tps},
                        {"confirmed", r.perf.confirmed},
                        {"span_s", r.perf.span_s},
                        {"final_accuracy", r.final_accuracy},
                        {"final_unreliable", r.final_unreliable}});
    }
    s["repeats"] = std::move(reps);
    return s;
}

std::string summary_csv_line(const std::string& label,
                             const metrics::MetricsReport& report) {
    std::string line = label;
    line += ',' + format_g17(report.tps_mean);
    line += ',' + format_g17(report.tps_std);
    line += ',' + format_g17(report.variability_pct);
    line += ',' + format_g17(report.quantiles.p25);
    line += ',' + format_g17(report.quantiles.p50);
    line += ',' + format_g17(report.quantiles.p75);
    line += ',' + format_g17(report.quantiles.max);
    line += '\n';
    return line;
}

constexpr const char* kSummaryCsvHeader =
    "label,tps_mean,tps_std,variability_pct,delay_p25,delay_p50,delay_p75,delay_max\n";

} // namespace

ExperimentOutput run_experiment(const ExperimentConfig& cfg) {
    validate_config(cfg);
    simd::select_backend(cfg.kernel_backend);

    const std::string exp_dir =
        cfg.out_dir.empty() ? "" : cfg.out_dir + "/" + cfg.exp_id;

    ExperimentOutput out;
    out.repeats.resize(cfg.repeats);

    const std::size_t workers =
        std::min<std::size_t>(cfg.jobs, static_cast<std::size_t>(cfg.repeats));
    auto repeat_dir = [&](std::uint64_t k) {
        return exp_dir.empty() ? "" : exp_dir + "/repeat_" + std::to_string(k);
    };
    if (workers <= 1) {
        for (std::uint64_t k = 0; k < cfg.repeats; ++k) {
            out.repeats[k] = run_repeat(cfg, k, repeat_dir(k));
        }
    } else {
        std::atomic<std::uint64_t> next{0};
        std::vector<std::thread> pool;
        std::vector<std::exception_ptr> errors(workers);
        for (std::size_t w = 0; w < workers; ++w) {
            pool.emplace_back([&, w]() {
                try {
                    for (;;) {
                        const std::uint64_t k = next.fetch_add(1);
                        if (k >= cfg.repeats) return;
                        out.repeats[k] = run_repeat(cfg, k, repeat_dir(k));
                    }
                } catch (...) {
                    errors[w] = std::current_exception();
                }
            });
        }
        for (auto& t : pool) t.join();
        for (const auto& e : errors) {
            if (e) std::rethrow_exception(e);
        }
    }

    std::vector<metrics::RepeatMetrics> per_repeat;
    per_repeat.reserve(out.repeats.size());
    for (const auto& r : out.repeats) per_repeat.push_back(r.perf);
    out.report = metrics::merge_repeats(std::move(per_repeat));
    out.summary = summary_from_report(cfg, out.report, out.repeats);

    if (!exp_dir.empty()) {
        write_text_file(exp_dir + "/summary.json", out.summary.dump(2) + "\n");
        if (cfg.format == "csv") {
            write_text_file(exp_dir + "/summary.csv",
                            std::string(kSummaryCsvHeader) +
                                summary_csv_line(cfg.exp_id, out.report));
        }
    }
    return out;
}

json run_sweep(const ExperimentConfig& base,
               const std::vector<std::uint64_t>& round_points) {
    validate_config(base);
    json sweep;
    sweep["schema"] = "tanglefl-sweep-v1";
    sweep["config"] = config_to_json(base);
    json points = json::array();
    std::vector<double> variabilities;
    std::string csv = kSummaryCsvHeader;
    for (const auto rounds : round_points) {
        ExperimentConfig cfg = base;
        cfg.rounds = rounds;
        cfg.exp_id = base.exp_id + "/rounds_" + std::to_string(rounds);
        const ExperimentOutput res = run_experiment(cfg);
        json point;
        point["rounds"] = rounds;
        point["tps_samples"] = res.report.tps_samples;
        point["tps_mean"] = res.report.tps_mean;
        point["tps_std"] = res.report.tps_std;
        point["variability_pct"] = res.report.variability_pct;
        point["delay_quantiles"] = res.summary["delay_quantiles"];
        points.push_back(std::move(point));
        variabilities.push_back(res.report.variability_pct);
        csv += summary_csv_line("rounds_" + std::to_string(rounds), res.report);
    }
    sweep["points"] = std::move(points);
    bool decreasing = true;
    for (std::size_t i = 1; i < variabilities.size(); ++i) {
        if (!(variabilities[i] < variabilities[i - 1])) decreasing = false;
    }
    sweep["variability_strictly_decreasing"] = decreasing;
    if (!base.out_dir.empty()) {
        const std::string dir = base.out_dir + "/" + base.exp_id;
        write_text_file(dir + "/summary.json", sweep.dump(2) + "\n");
        if (base.format == "csv") write_text_file(dir + "/summary.csv", csv);
    }
    return sweep;
}

namespace {

void audit_repeat(const fs::path& dir, std::vector<AuditViolation>& out) {
    const std::string where = dir.string();
    std::vector<dag::Block> blocks;
    try {
        blocks = dag::parse_snapshot(read_text_file((dir / "ledger.snapshot").string()));
    } catch (const std::exception& e) {
        out.push_back({"MalformedSnapshot", where, e.what()});
        return;
    }

    for (const auto& v : dag::verify_block_set(blocks)) {
        out.push_back({v.kind == dag::IntegrityViolation::Kind::id_mismatch
                           ? "BlockIdMismatch"
                           : "DanglingParent",
                       where, v.block.hex() + ": " + v.detail});
    }

    // Blob directory: filename (claimed id) must match the content hash.
    std::map<std::string, std::vector<std::uint8_t>> blob_files;
    const fs::path blob_dir = dir / "blobs";
    if (fs::exists(blob_dir)) {
        std::vector<fs::path> paths;
        for (const auto& e : fs::directory_iterator(blob_dir)) {
            if (e.is_regular_file()) paths.push_back(e.path());
        }
        std::sort(paths.begin(), paths.end());
        for (const auto& p : paths) {
            const std::string name = p.filename().string();
            if (name.size() != 64) {
                out.push_back({"BlobCorrupt", where, "unexpected blob file " + name});
                continue;
            }
            std::ifstream in(p, std::ios::binary);
            std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                            std::istreambuf_iterator<char>());
            if (to_hex(blake2b_256(std::span<const std::uint8_t>(bytes.data(),
                                                                 bytes.size()))) != name) {
                out.push_back({"BlobCorrupt", where,
                               "blob " + name + " does not hash to its id"});
            }
            blob_files[name] = std::move(bytes);
        }
    }

    // Reputation CSV rows, verbatim, for digest recomputation.
    std::vector<std::pair<std::uint64_t, std::string>> rep_rows;
    try {
        std::istringstream in(read_text_file((dir / "reputation.csv").string()));
        std::string line;
        std::getline(in, line); // header
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            const std::size_t c1 = line.find(',');
            const std::size_t c2 = line.find(',', c1 + 1);
            rep_rows.emplace_back(std::stoull(line.substr(c1 + 1, c2 - c1 - 1)), line);
        }
    } catch (const std::exception& e) {
        out.push_back({"MalformedReputation", where, e.what()});
    }

    // Replay every milestone first: anchors are checked against the final
    // confirmed state (trailing milestones confirm the last round's updates).
    std::unordered_map<dag::BlockId, const dag::Block*, dag::BlockIdHash> by_id;
    for (const auto& b : blocks) by_id[b.id] = &b;
    std::unordered_set<dag::BlockId, dag::BlockIdHash> confirmed;
    for (const auto& b : blocks) {
        if (!dag::is_milestone_payload(b.payload)) continue;
        std::vector<dag::BlockId> stack(b.parents.begin(), b.parents.end());
        while (!stack.empty()) {
            const dag::BlockId id = stack.back();
            stack.pop_back();
            auto it = by_id.find(id);
            if (it == by_id.end() || confirmed.count(id)) continue;
            confirmed.insert(id);
            for (const auto& p : it->second->parents) stack.push_back(p);
        }
    }

    for (const auto& b : blocks) {
        if (dag::is_milestone_payload(b.payload)) continue;
        if (b.payload.empty() || dag::is_checkpoint_payload(b.payload)) continue;
        dapp::AnchorRecord rec;
        try {
            rec = dapp::decode_anchor_record(b.payload);
        } catch (const std::exception& e) {
            out.push_back({"MalformedAnchor", where, b.id.hex() + ": " + e.what()});
            continue;
        }
        if (rec.kind == dapp::AnchorKind::reputation_digest) {
            Blake2bHasher h;
            for (const auto& [round, row] : rep_rows) {
                if (round <= rec.round) {
                    h.update(row);
                    h.update("\n");
                }
            }
            if (!(h.finish() == rec.content_hash.digest)) {
                out.push_back({"RepDigestMismatch", where,
                               "round " + std::to_string(rec.round) +
                                   " digest does not match reputation.csv"});
            }
            continue;
        }
        // DeviceUpdate / GlobalModel reference an off-chain blob.
        const std::string hex = rec.content_hash.hex();
        auto bf = blob_files.find(hex);
        if (bf == blob_files.end()) {
            out.push_back({"MissingBlob", where, b.id.hex() + " references " + hex});
        }
        if (rec.kind == dapp::AnchorKind::global_model) {
            for (const auto& c : rec.contributing) {
                if (!by_id.count(c)) {
                    out.push_back({"MissingContrib", where,
                                   b.id.hex() + " lists unknown update " + c.hex()});
                } else if (!confirmed.count(c)) {
                    out.push_back({"UnconfirmedContrib", where,
                                   b.id.hex() + " lists unconfirmed update " + c.hex()});
                }
            }
        }
    }
}

} // namespace

std::vector<AuditViolation> audit_experiment(const std::string& exp_dir) {
    std::vector<AuditViolation> out;
    if (!fs::exists(exp_dir)) {
        out.push_back({"MissingArtifacts", exp_dir, "directory does not exist"});
        return out;
    }
    std::vector<fs::path> repeat_dirs;
    for (const auto& e : fs::recursive_directory_iterator(exp_dir)) {
        if (e.is_directory() && e.path().filename().string().rfind("repeat_", 0) == 0) {
            repeat_dirs.push_back(e.path());
        }
    }
    std::sort(repeat_dirs.begin(), repeat_dirs.end());
    if (repeat_dirs.empty()) {
        out.push_back({"MissingArtifacts", exp_dir, "no repeat_* directories found"});
        return out;
    }
    for (const auto& d : repeat_dirs) audit_repeat(d, out);
    return out;
}

nlohmann::json recompute_report(const std::string& exp_dir) {
    std::vector<fs::path> repeat_dirs;
    for (const auto& e : fs::recursive_directory_iterator(exp_dir)) {
        if (e.is_directory() && e.path().filename().string().rfind("repeat_", 0) == 0) {
            repeat_dirs.push_back(e.path());
        }
    }
    std::sort(repeat_dirs.begin(), repeat_dirs.end());
    if (repeat_dirs.empty()) {
        throw std::runtime_error("no repeat_* directories under " + exp_dir);
    }

    std::string span_mode = "activity";
    const fs::path summary_path = fs::path(exp_dir) / "summary.json";
    json stored;
    if (fs::exists(summary_path)) {
        stored = json::parse(read_text_file(summary_path.string()));
        if (stored.contains("config") && stored["config"].contains("span_mode")) {
            span_mode = stored["config"]["span_mode"].get<std::string>();
        }
    }

    std::vector<metrics::RepeatMetrics> per_repeat;
    for (std::size_t k = 0; k < repeat_dirs.size(); ++k) {
        const auto samples = metrics::samples_from_event_log(
            read_text_file((repeat_dirs[k] / "events.log").string()));
        metrics::RepeatMetrics m;
        m.repeat = k;
        m.confirmed = samples.size();
        if (span_mode == "wall") {
            double last = 0.0;
            for (const auto& s : samples) last = std::max(last, s.confirm_s);
            m.tps = metrics::compute_tps(samples, last);
            m.span_s = last;
        } else {
            m.tps = metrics::compute_tps(samples);
        }
        m.delays_s = metrics::delay_samples(samples);
        per_repeat.push_back(std::move(m));
    }
    const auto report = metrics::merge_repeats(std::move(per_repeat));

    json j;
    j["schema"] = "tanglefl-recomputed-v1";
    j["source"] = exp_dir;
    j["tps_samples"] = report.tps_samples;
    j["tps_mean"] = report.tps_mean;
    j["tps_std"] = report.tps_std;
    j["variability_pct"] = report.variability_pct;
    j["delay_quantiles"] = {{"p25", report.quantiles.p25},
                            {"p50", report.quantiles.p50},
                            {"p75", report.quantiles.p75},
                            {"max", report.quantiles.max}};
    j["n_delay_samples"] = report.n_delay_samples;
    if (!stored.is_null() && stored.contains("tps_samples")) {
        j["matches_stored"] = stored["tps_samples"] == j["tps_samples"];
    }
    return j;
}

} // namespace tanglefl::experiment
