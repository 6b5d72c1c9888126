#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "bao/plan.hpp"
#include "bao/rng.hpp"

namespace bao {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

// One tree-convolution filter bank: an affine map over (node, left child,
// right child) triples. Absent children contribute the zero vector.
struct ConvLayer {
    Mat w_self;   // out x in
    Mat w_left;   // out x in
    Mat w_right;  // out x in
    Vec bias;     // out
};

// Per-node layer normalization over the feature dimension, learned gain/shift.
struct NormLayer {
    Vec gain;
    Vec shift;
};

struct DenseLayer {
    Mat w;  // out x in
    Vec bias;
};

struct TcnnDims {
    int input_width = 12;
    std::vector<int> conv_channels{256, 128, 64};
    int fc_hidden = 32;
    // fixed preconditioning applied to the feature vectors ahead of the
    // first convolution; log-scaled cardinalities span ~[0, 26], and the
    // normalization layers behave much better on O(1) inputs
    double input_scale = 1.0 / 16.0;

    bool operator==(const TcnnDims&) const = default;
};

// Plan-performance predictor: stacked tree convolutions with layer norm and
// ReLU, dynamic max pooling over nodes, then a two-layer fully connected
// head producing one scalar. The network regresses log1p of the observed
// performance metric.
struct TcnnModel {
    TcnnDims dims;
    std::uint64_t init_seed = 0;

    std::vector<ConvLayer> conv;
    std::vector<NormLayer> conv_norm;
    DenseLayer fc1;
    NormLayer fc1_norm;
    DenseLayer fc2;
};

struct TrainConfig {
    int batch_size = 16;
    int max_epochs = 100;
    int convergence_window = 10;         // epochs
    double convergence_threshold = 0.01; // relative loss decrease
    double learning_rate = 1e-3;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
};

struct Prediction {
    double value = 0.0;  // same units as the observed performance metric
};

// Kaiming-style uniform fan-in init, fully determined by (dims, seed).
TcnnModel init_model(const TcnnDims& dims, std::uint64_t seed);

// All parameter tensors finite?
bool model_is_finite(const TcnnModel& model);

// Visits every parameter tensor as a flat double span, in the fixed
// serialization order (per conv layer: w_self, w_left, w_right, bias,
// norm gain, norm shift; then fc1 w/bias, fc1 norm gain/shift, fc2 w/bias).
// Eigen matrices are traversed in their native column-major storage order.
template <class Model, class Fn>
void visit_params(Model& model, Fn&& fn) {
    auto mat = [&](auto& m) { fn(std::span(m.data(), static_cast<std::size_t>(m.size()))); };
    for (std::size_t i = 0; i < model.conv.size(); ++i) {
        mat(model.conv[i].w_self);
        mat(model.conv[i].w_left);
        mat(model.conv[i].w_right);
        mat(model.conv[i].bias);
        mat(model.conv_norm[i].gain);
        mat(model.conv_norm[i].shift);
    }
    mat(model.fc1.w);
    mat(model.fc1.bias);
    mat(model.fc1_norm.gain);
    mat(model.fc1_norm.shift);
    mat(model.fc2.w);
    mat(model.fc2.bias);
}

std::size_t param_count(const TcnnModel& model);

// Applies one convolution filter bank to a tree, preserving shape. Exposed
// separately so it can be checked against a naive reference.
// Output node i = w_self*x_i + w_left*x_left(i) + w_right*x_right(i) + bias.
Mat tree_conv_layer(const VectorTree& tree, const Mat& node_features,
                    const ConvLayer& layer);

// Elementwise max over all node vectors.
Vec dynamic_pool(const Mat& node_features);

// Full forward pass. The returned value is the raw network output
// (log1p-space when the model was trained on performance data).
double forward(const TcnnModel& model, const VectorTree& tree);

// forward() for several trees in one batched pass; identical results.
std::vector<double> forward_batch(const TcnnModel& model,
                                  std::span<const VectorTree* const> trees);

// Network output mapped back to performance units (expm1 of forward).
double predict_performance(const TcnnModel& model, const VectorTree& tree);

// Mean squared error.
double mse_loss(std::span<const double> predictions, std::span<const double> targets);

// A training example: tree plus regression target (in the network's output
// space; train() applies the log1p transform to raw performance itself).
struct TrainExample {
    const VectorTree* tree;
    double target;
};

// Exact reverse-mode gradients of the batch MSE w.r.t. every parameter.
// Returns (gradients, batch loss). Gradient tensors mirror the model layout.
std::pair<TcnnModel, double> backward(const TcnnModel& model,
                                      std::span<const TrainExample> batch);

// Epoch index (1-based) at which the convergence rule first fires for this
// loss history, or 0 if it never does. The rule: relative decrease between
// the loss `window` epochs ago and the current epoch is below `threshold`.
int convergence_epoch(std::span<const double> loss_history, int window,
                      double threshold);

struct TrainResult {
    TcnnModel model;
    std::vector<double> epoch_loss;  // one entry per completed epoch
};

// Adam over shuffled mini-batches; raw performances are log1p-transformed
// into regression targets. Stops at max_epochs or when the convergence rule
// fires. Throws std::runtime_error if the loss turns non-finite.
TrainResult train(TcnnModel model, std::span<const VectorTree* const> trees,
                  std::span<const double> performances, const TrainConfig& config,
                  Rng& rng);

// Checkpoint I/O: versioned binary parameter file plus a JSON sidecar
// (written next to it, suffix ".json") recording the TrainConfig.
void save_checkpoint(const TcnnModel& model, const TrainConfig& config,
                     const std::string& path);
std::pair<TcnnModel, TrainConfig> load_checkpoint(const std::string& path);

}  // namespace bao
