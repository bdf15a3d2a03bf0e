#include "tanglefl/fl.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>

#include "tanglefl/simd/kernels.hpp"

namespace tanglefl::fl {

const char kParamsMagic[4] = {'T', 'F', 'P', '1'};

bool ModelParams::all_finite() const {
    for (double w : weights) {
        if (!std::isfinite(w)) return false;
    }
    return true;
}

ModelParams init_model(std::uint64_t seed, Shapes shapes) {
    if (shapes.input_dim < 1 || shapes.hidden_dim < 1 || shapes.output_dim < 1) {
        throw BadShapes("model dimensions must all be >= 1");
    }
    ModelParams p;
    p.shapes = shapes;
    p.weights.assign(shapes.weight_count(), 0.0);
    Rng rng(derive_seed(seed, "init_model"));
    const double s1 = 1.0 / std::sqrt(static_cast<double>(shapes.input_dim));
    const double s2 = 1.0 / std::sqrt(static_cast<double>(shapes.hidden_dim));
    double* w1 = p.w1();
    for (std::size_t i = 0; i < shapes.input_dim * shapes.hidden_dim; ++i) {
        w1[i] = rng.uniform(-s1, s1);
    }
    double* w2 = p.w2();
    for (std::size_t i = 0; i < shapes.hidden_dim * shapes.output_dim; ++i) {
        w2[i] = rng.uniform(-s2, s2);
    }
    return p;
}

namespace {

void check_shard_shapes(const ModelParams& params, const DataShard& shard) {
    if (shard.input_dim != params.shapes.input_dim) {
        throw ShapeMismatch("shard input_dim " + std::to_string(shard.input_dim) +
                            " != model input_dim " +
                            std::to_string(params.shapes.input_dim));
    }
    if (shard.size() == 0) throw ShapeMismatch("empty shard");
    for (auto y : shard.labels) {
        if (y >= params.shapes.output_dim) {
            throw ShapeMismatch("label " + std::to_string(y) + " out of range");
        }
    }
}

// Forward pass for `rows` gathered samples. Fills hidden activations and
// per-row class probabilities, returns mean cross-entropy loss.
double forward(const ModelParams& p, const double* x, const std::uint32_t* y,
               std::size_t rows, std::vector<double>& hidden,
               std::vector<double>& probs) {
    const auto& k = simd::active();
    const std::size_t in = p.shapes.input_dim;
    const std::size_t hid = p.shapes.hidden_dim;
    const std::size_t out = p.shapes.output_dim;

    hidden.assign(rows * hid, 0.0);
    k.matmul_nn(rows, in, hid, x, p.w1(), hidden.data());
    const double* b1 = p.b1();
    for (std::size_t r = 0; r < rows; ++r) {
        double* hrow = hidden.data() + r * hid;
        for (std::size_t j = 0; j < hid; ++j) hrow[j] = std::tanh(hrow[j] + b1[j]);
    }

    probs.assign(rows * out, 0.0);
    k.matmul_nn(rows, hid, out, hidden.data(), p.w2(), probs.data());
    const double* b2 = p.b2();
    double loss = 0.0;
    for (std::size_t r = 0; r < rows; ++r) {
        double* prow = probs.data() + r * out;
        double maxv = -1e300;
        for (std::size_t j = 0; j < out; ++j) {
            prow[j] += b2[j];
            maxv = std::max(maxv, prow[j]);
        }
        double denom = 0.0;
        for (std::size_t j = 0; j < out; ++j) {
            prow[j] = std::exp(prow[j] - maxv);
            denom += prow[j];
        }
        for (std::size_t j = 0; j < out; ++j) prow[j] /= denom;
        loss -= std::log(std::max(prow[y[r]], 1e-300));
    }
    return loss / static_cast<double>(rows);
}

} // namespace

double loss_and_gradient(const ModelParams& params, const DataShard& shard,
                         std::size_t row_begin, std::size_t row_end,
                         const std::vector<std::uint32_t>& row_order,
                         std::vector<double>& grad_out) {
    const auto& k = simd::active();
    const std::size_t in = params.shapes.input_dim;
    const std::size_t hid = params.shapes.hidden_dim;
    const std::size_t out = params.shapes.output_dim;
    const std::size_t rows = row_end - row_begin;

    std::vector<double> x(rows * in);
    std::vector<std::uint32_t> y(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const std::uint32_t src = row_order[row_begin + r];
        std::memcpy(x.data() + r * in, shard.row(src), in * sizeof(double));
        y[r] = shard.labels[src];
    }

    std::vector<double> hidden, probs;
    const double loss = forward(params, x.data(), y.data(), rows, hidden, probs);

    // dlogits = (softmax - onehot) / rows
    std::vector<double>& dlogits = probs;
    const double inv_rows = 1.0 / static_cast<double>(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        double* drow = dlogits.data() + r * out;
        drow[y[r]] -= 1.0;
        for (std::size_t j = 0; j < out; ++j) drow[j] *= inv_rows;
    }

    grad_out.assign(params.shapes.weight_count(), 0.0);
    double* g_w1 = grad_out.data();
    double* g_b1 = g_w1 + in * hid;
    double* g_w2 = g_b1 + hid;
    double* g_b2 = g_w2 + hid * out;

    k.matmul_tn(rows, hid, out, hidden.data(), dlogits.data(), g_w2);
    for (std::size_t r = 0; r < rows; ++r) {
        const double* drow = dlogits.data() + r * out;
        for (std::size_t j = 0; j < out; ++j) g_b2[j] += drow[j];
    }

    std::vector<double> dhidden(rows * hid, 0.0);
    k.matmul_nt(rows, out, hid, dlogits.data(), params.w2(), dhidden.data());
    for (std::size_t i = 0; i < rows * hid; ++i) {
        const double h = hidden[i];
        dhidden[i] *= (1.0 - h * h);
    }

    k.matmul_tn(rows, in, hid, x.data(), dhidden.data(), g_w1);
    for (std::size_t r = 0; r < rows; ++r) {
        const double* drow = dhidden.data() + r * hid;
        for (std::size_t j = 0; j < hid; ++j) g_b1[j] += drow[j];
    }
    return loss;
}

TrainResult local_train(const ModelParams& params, const DataShard& shard,
                        const TrainConfig& cfg) {
    check_shard_shapes(params, shard);
    if (cfg.epochs < 1) throw FlError("epochs must be >= 1");
    if (cfg.learning_rate < 0.0) throw FlError("learning_rate must be >= 0");
    if (cfg.batch_size < 1) throw FlError("batch_size must be >= 1");

    const auto& k = simd::active();
    TrainResult result;
    result.params = params;
    result.n_samples = shard.size();

    std::vector<std::uint32_t> order(shard.size());
    std::iota(order.begin(), order.end(), 0u);
    Rng rng(derive_seed(cfg.seed, "local_train"));

    std::vector<double> grad;
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        rng.shuffle(order);
        double epoch_loss = 0.0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t end = std::min(start + cfg.batch_size, order.size());
            const double batch_loss =
                loss_and_gradient(result.params, shard, start, end, order, grad);
            if (!std::isfinite(batch_loss)) {
                throw NonFiniteLoss("training diverged at epoch " + std::to_string(epoch));
            }
            epoch_loss += batch_loss * static_cast<double>(end - start);
            k.axpy(grad.size(), -cfg.learning_rate, grad.data(),
                   result.params.weights.data());
        }
        if (epoch + 1 == cfg.epochs) {
            result.train_loss = epoch_loss / static_cast<double>(order.size());
        }
    }
    if (!result.params.all_finite()) throw NonFiniteLoss("non-finite weights after training");
    return result;
}

double evaluate(const ModelParams& params, const DataShard& validation) {
    check_shard_shapes(params, validation);
    const std::size_t n = validation.size();
    std::vector<std::uint32_t> order(n);
    std::iota(order.begin(), order.end(), 0u);

    // Forward in one pass over the whole set.
    std::vector<double> x(validation.features);
    std::vector<double> hidden, probs;
    forward(params, x.data(), validation.labels.data(), n, hidden, probs);

    const std::size_t out = params.shapes.output_dim;
    std::size_t correct = 0;
    for (std::size_t r = 0; r < n; ++r) {
        const double* prow = probs.data() + r * out;
        std::size_t best = 0;
        for (std::size_t j = 1; j < out; ++j) {
            if (prow[j] > prow[best]) best = j;
        }
        if (best == validation.labels[r]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(n);
}

ModelParams fedavg(const std::vector<std::pair<ModelParams, double>>& updates) {
    if (updates.empty()) throw EmptyUpdateSet("fedavg over zero updates");
    const Shapes shapes = updates.front().first.shapes;
    double total = 0.0;
    for (const auto& [p, w] : updates) {
        if (!(p.shapes == shapes)) throw ShapeMismatch("fedavg over mixed shapes");
        if (p.weights.size() != shapes.weight_count()) {
            throw ShapeMismatch("weight vector length does not match shapes");
        }
        if (w < 0.0) throw FlError("negative aggregation weight");
        total += w;
    }
    if (total <= 0.0) throw AllZeroWeights("aggregation weights sum to zero");

    const auto& k = simd::active();
    ModelParams out;
    out.shapes = shapes;
    out.weights.assign(shapes.weight_count(), 0.0);
    for (const auto& [p, w] : updates) {
        if (w == 0.0) continue;
        k.axpy(out.weights.size(), w / total, p.weights.data(), out.weights.data());
    }
    return out;
}

namespace {

void fill_class_mean(std::vector<double>& mean, std::size_t cls, std::size_t input_dim,
                     double radius) {
    mean.assign(input_dim, 0.0);
    const std::size_t axis = cls % input_dim;
    mean[axis] = (cls / input_dim) % 2 == 0 ? radius : -radius;
}

std::uint32_t draw_class(Rng& rng, const std::vector<double>& proportions) {
    const double u = rng.uniform01();
    double acc = 0.0;
    for (std::size_t c = 0; c < proportions.size(); ++c) {
        acc += proportions[c];
        if (u < acc) return static_cast<std::uint32_t>(c);
    }
    return static_cast<std::uint32_t>(proportions.size() - 1);
}

void append_sample(DataShard& shard, Rng& rng, std::uint32_t cls,
                   const SyntheticConfig& cfg, std::vector<double>& mean_scratch) {
    fill_class_mean(mean_scratch, cls, cfg.input_dim, cfg.cluster_radius);
    for (std::size_t d = 0; d < cfg.input_dim; ++d) {
        shard.features.push_back(mean_scratch[d] + cfg.noise_sigma * rng.normal());
    }
    shard.labels.push_back(cls);
}

} // namespace

SyntheticDataset make_synthetic_dataset(std::uint64_t seed, const SyntheticConfig& cfg) {
    if (cfg.n_clients < 1) throw FlError("n_clients must be >= 1");
    if (cfg.n_classes < 2) throw FlError("n_classes must be >= 2");
    if (cfg.non_iid_alpha <= 0.0) throw FlError("non_iid_alpha must be > 0");

    SyntheticDataset out;
    out.shards.resize(cfg.n_clients);
    std::vector<double> mean_scratch;

    const std::size_t base = cfg.total_samples / cfg.n_clients;
    const std::size_t extra = cfg.total_samples % cfg.n_clients;
    for (std::size_t c = 0; c < cfg.n_clients; ++c) {
        DataShard& shard = out.shards[c];
        shard.input_dim = cfg.input_dim;
        Rng rng(derive_seed(seed, "shard", c));
        const auto proportions = rng.dirichlet(cfg.non_iid_alpha, cfg.n_classes);
        const std::size_t n = base + (c < extra ? 1 : 0);
        for (std::size_t i = 0; i < n; ++i) {
            append_sample(shard, rng, draw_class(rng, proportions), cfg, mean_scratch);
        }
    }

    out.validation.input_dim = cfg.input_dim;
    out.validation.owner = "validation";
    Rng vrng(derive_seed(seed, "validation"));
    for (std::size_t i = 0; i < cfg.validation_samples; ++i) {
        const auto cls = static_cast<std::uint32_t>(vrng.below(cfg.n_classes));
        append_sample(out.validation, vrng, cls, cfg, mean_scratch);
    }
    return out;
}

DataShard load_csv_dataset(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw FlError("cannot open dataset file: " + path);
    std::string line;
    if (!std::getline(in, line)) throw FlError("dataset file is empty: " + path);

    std::vector<std::string> header;
    {
        std::stringstream ss(line);
        std::string col;
        while (std::getline(ss, col, ',')) header.push_back(col);
    }
    std::size_t label_col = header.size();
    for (std::size_t i = 0; i < header.size(); ++i) {
        if (header[i] == "label") label_col = i;
    }
    if (label_col == header.size()) throw FlError("dataset has no `label` column");
    if (header.size() < 2) throw FlError("dataset needs at least one feature column");

    DataShard shard;
    shard.input_dim = header.size() - 1;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string cell;
        std::size_t col = 0;
        while (std::getline(ss, cell, ',')) {
            try {
                if (col == label_col) {
                    const long v = std::stol(cell);
                    if (v < 0) throw FlError("negative label");
                    shard.labels.push_back(static_cast<std::uint32_t>(v));
                } else {
                    shard.features.push_back(std::stod(cell));
                }
            } catch (const std::exception&) {
                throw FlError("bad value at line " + std::to_string(line_no) + ": " + cell);
            }
            ++col;
        }
        if (col != header.size()) {
            throw FlError("wrong column count at line " + std::to_string(line_no));
        }
    }
    if (shard.size() == 0) throw FlError("dataset has no rows: " + path);
    return shard;
}

std::vector<DataShard> partition_dirichlet(const DataShard& data, std::size_t n_clients,
                                           double alpha, std::uint64_t seed) {
    if (n_clients < 1) throw FlError("n_clients must be >= 1");
    std::uint32_t n_classes = 0;
    for (auto y : data.labels) n_classes = std::max(n_classes, y + 1);

    // Per class, split that class's rows across clients with Dirichlet
    // proportions; keeps each client's label mixture alpha-controlled.
    std::vector<std::vector<std::uint32_t>> by_class(n_classes);
    for (std::uint32_t i = 0; i < data.size(); ++i) by_class[data.labels[i]].push_back(i);

    std::vector<DataShard> shards(n_clients);
    for (auto& s : shards) s.input_dim = data.input_dim;

    Rng rng(derive_seed(seed, "partition"));
    for (std::uint32_t cls = 0; cls < n_classes; ++cls) {
        const auto& rows = by_class[cls];
        if (rows.empty()) continue;
        const auto proportions = rng.dirichlet(alpha, n_clients);
        std::size_t assigned = 0;
        for (std::size_t c = 0; c < n_clients; ++c) {
            std::size_t take = (c + 1 == n_clients)
                                   ? rows.size() - assigned
                                   : static_cast<std::size_t>(
                                         proportions[c] * static_cast<double>(rows.size()));
            take = std::min(take, rows.size() - assigned);
            for (std::size_t i = 0; i < take; ++i) {
                const std::uint32_t src = rows[assigned + i];
                shards[c].labels.push_back(cls);
                shards[c].features.insert(shards[c].features.end(), data.row(src),
                                          data.row(src) + data.input_dim);
            }
            assigned += take;
        }
    }
    return shards;
}

namespace {

void append_u32le(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void append_u64le(std::vector<std::uint8_t>& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t read_u32le(const std::uint8_t* p) {
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | p[i];
    return v;
}

std::uint64_t read_u64le(const std::uint8_t* p) {
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
    return v;
}

} // namespace

std::vector<std::uint8_t> serialize_params(const ModelParams& params) {
    if (params.weights.size() != params.shapes.weight_count()) {
        throw ShapeMismatch("weight vector length does not match shapes");
    }
    std::vector<std::uint8_t> out;
    out.reserve(24 + params.weights.size() * 8);
    out.insert(out.end(), kParamsMagic, kParamsMagic + 4);
    append_u32le(out, static_cast<std::uint32_t>(params.shapes.input_dim));
    append_u32le(out, static_cast<std::uint32_t>(params.shapes.hidden_dim));
    append_u32le(out, static_cast<std::uint32_t>(params.shapes.output_dim));
    append_u64le(out, params.weights.size());
    for (double w : params.weights) {
        std::uint64_t bits;
        std::memcpy(&bits, &w, 8);
        append_u64le(out, bits);
    }
    return out;
}

ModelParams deserialize_params(const std::vector<std::uint8_t>& bytes) {
    if (bytes.size() < 24) throw MalformedBytes("params blob too short");
    if (std::memcmp(bytes.data(), kParamsMagic, 4) != 0) {
        throw MalformedBytes("bad params magic");
    }
    ModelParams p;
    p.shapes.input_dim = read_u32le(bytes.data() + 4);
    p.shapes.hidden_dim = read_u32le(bytes.data() + 8);
    p.shapes.output_dim = read_u32le(bytes.data() + 12);
    const std::uint64_t count = read_u64le(bytes.data() + 16);
    if (p.shapes.input_dim < 1 || p.shapes.hidden_dim < 1 || p.shapes.output_dim < 1) {
        throw MalformedBytes("bad dimensions in params header");
    }
    if (count != p.shapes.weight_count()) {
        throw MalformedBytes("weight count does not match header shapes");
    }
    if (bytes.size() != 24 + count * 8) throw MalformedBytes("params blob size mismatch");
    p.weights.resize(count);
    for (std::uint64_t i = 0; i < count; ++i) {
        const std::uint64_t bits = read_u64le(bytes.data() + 24 + i * 8);
        std::memcpy(&p.weights[i], &bits, 8);
    }
    return p;
}

} // namespace tanglefl::fl
