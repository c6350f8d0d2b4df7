#pragma once

// The two-layer deep mixture of experts, the single-layer softmax mixture,
// and the baseline family it is compared against. One Model struct covers
// all of them; `kind` selects which parameter groups exist and how the
// forward/backward passes compose them.
//
//   dmoe               z1 = sum_i g1_i(x) f1_i(x);  z2 = sum_j g2_j(z1) f2_j(z1);
//                      z3 = softmax(W3 z2 + b3)
//   single_expert_l2   layer-1 mixture, one fixed layer-2 expert
//   concat_l2          layer-1 mixture, all layer-2 expert outputs concatenated
//   matched_dnn        relu -> relu -> linear, first hidden width solved so the
//                      parameter total matches the dmoe of the same Arch
//   one_layer          layer-1 mixture mapped straight to the output layer
//   one_layer_single   one expert, no gate (a plain one-hidden-layer MLP)
//   one_layer_concat   concatenated layer-1 experts to the output layer
//   softmax_moe        sum_i g_i(x) softmax(f_i(x)) with per-expert class maps
//
// Gradients are hand-derived per kind; grad_check in the test suite holds
// every path to finite differences.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dmoe/matrix.hpp"
#include "dmoe/rng.hpp"

namespace dmoe {

enum class ModelKind {
    dmoe,
    single_expert_l2,
    concat_l2,
    matched_dnn,
    one_layer,
    one_layer_single,
    one_layer_concat,
    softmax_moe,
};

std::string to_string(ModelKind k);
ModelKind model_kind_from_string(const std::string& s);

// y = W x + b. Experts wrap this in a rectifier; the output layer does not.
struct DenseLayer {
    Matrix W;  // out x in
    Matrix b;  // out x 1
};

// Two-layer gate: softmax(B * max(0, A x + a) + b).
struct GatingParams {
    Matrix A;  // hidden x in
    Matrix a;  // hidden x 1
    Matrix B;  // experts x hidden
    Matrix b;  // experts x 1
};

struct Arch {
    std::size_t input_dim = 0;
    std::size_t classes = 0;
    std::size_t experts1 = 1;
    std::size_t hidden1 = 1;
    std::size_t experts2 = 1;
    std::size_t hidden2 = 1;
    std::size_t gate_hidden1 = 1;
    std::size_t gate_hidden2 = 1;
};

struct Model {
    ModelKind kind = ModelKind::dmoe;
    Arch arch;  // as requested at init; matched_dnn stores its solved width too
    std::vector<DenseLayer> experts1;
    std::optional<GatingParams> gate1;
    std::vector<DenseLayer> experts2;  // for softmax_moe these are the class maps
    std::optional<GatingParams> gate2;
    DenseLayer output;  // empty for softmax_moe

    std::size_t num_gates1() const { return gate1 ? experts1.size() : 0; }
    std::size_t num_gates2() const { return gate2 ? experts2.size() : 0; }
};

// Every learnable matrix with a stable name, in a fixed traversal order.
// The order defines the init draw sequence and the checkpoint layout.
std::vector<std::pair<std::string, Matrix*>> param_list(Model& m);
std::vector<std::pair<std::string, const Matrix*>> param_list(const Model& m);

// Allocate all parameter matrices for a kind/arch, zero-valued. matched_dnn
// resolves its width here via solve_matched_hidden.
Model shape_model(ModelKind kind, const Arch& arch);

// Weights uniform in [-1/sqrt(fan_in), +1/sqrt(fan_in)], biases zero.
Model init_model(ModelKind kind, const Arch& arch, Rng& rng);
Model init_dmoe(const Arch& arch, Rng& rng);

// Same-shaped zero parameters, used as the gradient holder.
Model zeros_like(const Model& m);
void zero_params(Model& m);

std::size_t count_params(const Model& m);
std::size_t count_params(ModelKind kind, const Arch& arch);

// Largest h1 with input*h1 + h1 + h1*h2 + h2 + h2*classes + classes <= target.
std::size_t solve_matched_hidden(std::size_t dmoe_total, std::size_t input_dim, std::size_t h2,
                                 std::size_t classes);

// Per-layer keep flags for the balancing constraint; empty vector = no mask.
struct GateMasks {
    std::vector<std::uint8_t> layer1;
    std::vector<std::uint8_t> layer2;
};

// Batch forward pass record, one row per example. G1/G2 hold the gate values
// actually used (post-constraint); Z3 rows are class probabilities.
struct ForwardTrace {
    std::size_t batch = 0;
    Matrix X;
    Matrix H1;
    Matrix G1;
    std::vector<Matrix> F1;
    Matrix Z1;
    Matrix H2;
    Matrix G2;
    std::vector<Matrix> F2;
    Matrix Z2;
    std::vector<Matrix> P;  // softmax_moe: per-expert class probabilities
    Matrix Z3;
};

void forward_into(ForwardTrace& t, const Model& m, const Matrix& X,
                  const GateMasks* masks = nullptr);
ForwardTrace forward(const Model& m, const Matrix& X, const GateMasks* masks = nullptr);

// Mean of -log z3[label] over the batch.
double mean_loss(const ForwardTrace& t, std::span<const std::int32_t> labels);

// Gradient of the mean loss for every parameter, written into `grads`
// (shapes must match; contents are overwritten).
void backward_into(Model& grads, const Model& m, const ForwardTrace& t,
                   std::span<const std::int32_t> labels);
Model backward(const Model& m, const ForwardTrace& t, std::span<const std::int32_t> labels);

// Gate evaluation on one input vector: returns the distribution over experts
// and the gate's hidden activations.
std::pair<std::vector<double>, std::vector<double>> gating_forward(const GatingParams& g,
                                                                   std::span<const double> input);

// Argmax class per row; ties go to the lowest class index.
std::vector<std::int32_t> predict(const Matrix& probabilities);

}  // namespace dmoe
