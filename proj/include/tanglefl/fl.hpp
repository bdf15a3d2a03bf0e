#pragma once

// Local training, evaluation, serialization, and FedAvg for a
// one-hidden-layer tanh classifier with softmax cross-entropy loss,
// plus the synthetic non-IID dataset generator and a CSV ingestion hook.

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "tanglefl/rng.hpp"

namespace tanglefl::fl {

struct FlError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct BadShapes : FlError {
    using FlError::FlError;
};
struct ShapeMismatch : FlError {
    using FlError::FlError;
};
struct NonFiniteLoss : FlError {
    using FlError::FlError;
};
struct EmptyUpdateSet : FlError {
    using FlError::FlError;
};
struct AllZeroWeights : FlError {
    using FlError::FlError;
};
struct MalformedBytes : FlError {
    using FlError::FlError;
};

struct Shapes {
    std::size_t input_dim = 0;
    std::size_t hidden_dim = 0;
    std::size_t output_dim = 0;

    bool operator==(const Shapes&) const = default;
    std::size_t weight_count() const {
        return input_dim * hidden_dim + hidden_dim + hidden_dim * output_dim + output_dim;
    }
};

// Flat layout: W1 (input x hidden, row-major), b1, W2 (hidden x output), b2.
struct ModelParams {
    Shapes shapes;
    std::vector<double> weights;

    double* w1() { return weights.data(); }
    double* b1() { return weights.data() + shapes.input_dim * shapes.hidden_dim; }
    double* w2() { return b1() + shapes.hidden_dim; }
    double* b2() { return w2() + shapes.hidden_dim * shapes.output_dim; }
    const double* w1() const { return weights.data(); }
    const double* b1() const { return weights.data() + shapes.input_dim * shapes.hidden_dim; }
    const double* w2() const { return b1() + shapes.hidden_dim; }
    const double* b2() const { return w2() + shapes.hidden_dim * shapes.output_dim; }

    bool all_finite() const;
};

struct DataShard {
    std::size_t input_dim = 0;
    std::vector<double> features; // n_samples x input_dim, row-major
    std::vector<std::uint32_t> labels;
    std::string owner;

    std::size_t size() const { return labels.size(); }
    const double* row(std::size_t i) const { return features.data() + i * input_dim; }
};

struct TrainConfig {
    std::size_t epochs = 20;
    double learning_rate = 0.15;
    std::size_t batch_size = 32;
    std::uint64_t seed = 0;
};

ModelParams init_model(std::uint64_t seed, Shapes shapes);

struct TrainResult {
    ModelParams params;
    std::size_t n_samples = 0;
    double train_loss = 0.0; // final-epoch mean
};

TrainResult local_train(const ModelParams& params, const DataShard& shard,
                        const TrainConfig& cfg);

// Mean cross-entropy loss and the gradient wrt every parameter; exposed so
// tests can check the analytic gradient against finite differences.
double loss_and_gradient(const ModelParams& params, const DataShard& shard,
                         std::size_t row_begin, std::size_t row_end,
                         const std::vector<std::uint32_t>& row_order,
                         std::vector<double>& grad_out);

double evaluate(const ModelParams& params, const DataShard& validation);

ModelParams fedavg(const std::vector<std::pair<ModelParams, double>>& updates);

struct SyntheticDataset {
    std::vector<DataShard> shards;
    DataShard validation;
};

struct SyntheticConfig {
    std::size_t n_clients = 20;
    double non_iid_alpha = 0.5;
    std::size_t n_classes = 10;
    std::size_t input_dim = 16;
    std::size_t total_samples = 2000;
    std::size_t validation_samples = 500;
    double cluster_radius = 3.0;
    double noise_sigma = 0.6;
};

// Gaussian class clusters at orthogonal means; per-client label proportions
// drawn from a symmetric Dirichlet(non_iid_alpha); validation drawn IID from
// the uniform class mixture.
SyntheticDataset make_synthetic_dataset(std::uint64_t seed, const SyntheticConfig& cfg);

// CSV ingestion: header row, float feature columns, integer `label` column.
DataShard load_csv_dataset(const std::string& path);

// Splits one shard across clients with Dirichlet(alpha) label proportions.
std::vector<DataShard> partition_dirichlet(const DataShard& data, std::size_t n_clients,
                                           double alpha, std::uint64_t seed);

// Canonical wire format: magic, dims, count, little-endian f64 weights.
std::vector<std::uint8_t> serialize_params(const ModelParams& params);
ModelParams deserialize_params(const std::vector<std::uint8_t>& bytes);

// Serialization magic; payload audits use it to prove no raw weights ever
// reach the ledger.
extern const char kParamsMagic[4];

} // namespace tanglefl::fl
