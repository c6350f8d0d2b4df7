#include "dmoe/model.hpp"

#include <cmath>
#include <stdexcept>

#include "dmoe/balance.hpp"
#include "dmoe/numeric.hpp"

namespace dmoe {

std::string to_string(ModelKind k) {
    switch (k) {
        case ModelKind::dmoe: return "dmoe";
        case ModelKind::single_expert_l2: return "single-expert-l2";
        case ModelKind::concat_l2: return "concat-l2";
        case ModelKind::matched_dnn: return "matched-dnn";
        case ModelKind::one_layer: return "one-layer";
        case ModelKind::one_layer_single: return "one-layer-single";
        case ModelKind::one_layer_concat: return "one-layer-concat";
        case ModelKind::softmax_moe: return "softmax-moe";
    }
    return "?";
}

ModelKind model_kind_from_string(const std::string& s) {
    for (ModelKind k : {ModelKind::dmoe, ModelKind::single_expert_l2, ModelKind::concat_l2,
                        ModelKind::matched_dnn, ModelKind::one_layer, ModelKind::one_layer_single,
                        ModelKind::one_layer_concat, ModelKind::softmax_moe})
        if (to_string(k) == s) return k;
    throw std::invalid_argument("unknown model kind: " + s);
}

namespace {

void push_gate(std::vector<std::pair<std::string, Matrix*>>& out, const std::string& prefix,
               GatingParams& g) {
    out.emplace_back(prefix + ".A", &g.A);
    out.emplace_back(prefix + ".a", &g.a);
    out.emplace_back(prefix + ".B", &g.B);
    out.emplace_back(prefix + ".b", &g.b);
}

}  // namespace

std::vector<std::pair<std::string, Matrix*>> param_list(Model& m) {
    std::vector<std::pair<std::string, Matrix*>> out;
    for (std::size_t i = 0; i < m.experts1.size(); ++i) {
        out.emplace_back("l1e" + std::to_string(i) + ".W", &m.experts1[i].W);
        out.emplace_back("l1e" + std::to_string(i) + ".b", &m.experts1[i].b);
    }
    if (m.gate1) push_gate(out, "gate1", *m.gate1);
    for (std::size_t i = 0; i < m.experts2.size(); ++i) {
        out.emplace_back("l2e" + std::to_string(i) + ".W", &m.experts2[i].W);
        out.emplace_back("l2e" + std::to_string(i) + ".b", &m.experts2[i].b);
    }
    if (m.gate2) push_gate(out, "gate2", *m.gate2);
    if (m.output.W.size() > 0) {
        out.emplace_back("out.W", &m.output.W);
        out.emplace_back("out.b", &m.output.b);
    }
    return out;
}

std::vector<std::pair<std::string, const Matrix*>> param_list(const Model& m) {
    std::vector<std::pair<std::string, const Matrix*>> out;
    for (auto& [name, mat] : param_list(const_cast<Model&>(m))) out.emplace_back(name, mat);
    return out;
}

namespace {

void require(bool ok, const std::string& msg) {
    if (!ok) throw std::invalid_argument(msg);
}

DenseLayer make_dense(std::size_t out_dim, std::size_t in_dim) {
    require(out_dim >= 1 && in_dim >= 1, "init_model: zero-size layer");
    return DenseLayer{Matrix(out_dim, in_dim), Matrix(out_dim, 1)};
}

GatingParams make_gate(std::size_t experts, std::size_t hidden, std::size_t in_dim) {
    require(experts >= 1 && hidden >= 1 && in_dim >= 1, "init_model: zero-size gate");
    return GatingParams{Matrix(hidden, in_dim), Matrix(hidden, 1), Matrix(experts, hidden),
                        Matrix(experts, 1)};
}

}  // namespace

// Shapes only; weights are still zero afterwards.
Model shape_model(ModelKind kind, const Arch& arch) {
    require(arch.input_dim >= 1 && arch.classes >= 1, "init_model: zero-size layer");
    Model m;
    m.kind = kind;
    m.arch = arch;
    const std::size_t d = arch.input_dim, C = arch.classes;
    switch (kind) {
        case ModelKind::dmoe:
            for (std::size_t i = 0; i < arch.experts1; ++i)
                m.experts1.push_back(make_dense(arch.hidden1, d));
            m.gate1 = make_gate(arch.experts1, arch.gate_hidden1, d);
            for (std::size_t j = 0; j < arch.experts2; ++j)
                m.experts2.push_back(make_dense(arch.hidden2, arch.hidden1));
            m.gate2 = make_gate(arch.experts2, arch.gate_hidden2, arch.hidden1);
            m.output = make_dense(C, arch.hidden2);
            break;
        case ModelKind::single_expert_l2:
            for (std::size_t i = 0; i < arch.experts1; ++i)
                m.experts1.push_back(make_dense(arch.hidden1, d));
            m.gate1 = make_gate(arch.experts1, arch.gate_hidden1, d);
            m.experts2.push_back(make_dense(arch.hidden2, arch.hidden1));
            m.output = make_dense(C, arch.hidden2);
            break;
        case ModelKind::concat_l2:
            for (std::size_t i = 0; i < arch.experts1; ++i)
                m.experts1.push_back(make_dense(arch.hidden1, d));
            m.gate1 = make_gate(arch.experts1, arch.gate_hidden1, d);
            for (std::size_t j = 0; j < arch.experts2; ++j)
                m.experts2.push_back(make_dense(arch.hidden2, arch.hidden1));
            m.output = make_dense(C, arch.experts2 * arch.hidden2);
            break;
        case ModelKind::matched_dnn: {
            const std::size_t target = count_params(ModelKind::dmoe, arch);
            const std::size_t h1 = solve_matched_hidden(target, d, arch.hidden2, C);
            m.experts1.push_back(make_dense(h1, d));
            m.experts2.push_back(make_dense(arch.hidden2, h1));
            m.output = make_dense(C, arch.hidden2);
            break;
        }
        case ModelKind::one_layer:
            for (std::size_t i = 0; i < arch.experts1; ++i)
                m.experts1.push_back(make_dense(arch.hidden1, d));
            m.gate1 = make_gate(arch.experts1, arch.gate_hidden1, d);
            m.output = make_dense(C, arch.hidden1);
            break;
        case ModelKind::one_layer_single:
            m.experts1.push_back(make_dense(arch.hidden1, d));
            m.output = make_dense(C, arch.hidden1);
            break;
        case ModelKind::one_layer_concat:
            for (std::size_t i = 0; i < arch.experts1; ++i)
                m.experts1.push_back(make_dense(arch.hidden1, d));
            m.output = make_dense(C, arch.experts1 * arch.hidden1);
            break;
        case ModelKind::softmax_moe:
            for (std::size_t i = 0; i < arch.experts1; ++i)
                m.experts1.push_back(make_dense(arch.hidden1, d));
            m.gate1 = make_gate(arch.experts1, arch.gate_hidden1, d);
            for (std::size_t i = 0; i < arch.experts1; ++i)
                m.experts2.push_back(make_dense(C, arch.hidden1));
            break;
    }
    return m;
}

Model init_model(ModelKind kind, const Arch& arch, Rng& rng) {
    Model m = shape_model(kind, arch);
    // Weights are drawn in a fixed order (layer-1 experts, gate1 A then B,
    // layer-2 experts, gate2, output), row-major within each matrix, so a
    // seed pins every parameter. Biases stay zero.
    auto fill = [&rng](Matrix& w) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(w.cols));
        for (double& v : w.data) v = rng.uniform(-bound, bound);
    };
    for (auto& e : m.experts1) fill(e.W);
    if (m.gate1) {
        fill(m.gate1->A);
        fill(m.gate1->B);
    }
    for (auto& e : m.experts2) fill(e.W);
    if (m.gate2) {
        fill(m.gate2->A);
        fill(m.gate2->B);
    }
    if (m.output.W.size() > 0) fill(m.output.W);
    return m;
}

Model init_dmoe(const Arch& arch, Rng& rng) { return init_model(ModelKind::dmoe, arch, rng); }

Model zeros_like(const Model& m) {
    Model z;
    z.kind = m.kind;
    z.arch = m.arch;
    z.experts1.resize(m.experts1.size());
    z.experts2.resize(m.experts2.size());
    if (m.gate1) z.gate1.emplace();
    if (m.gate2) z.gate2.emplace();
    for (std::size_t i = 0; i < m.experts1.size(); ++i) {
        z.experts1[i].W.resize(m.experts1[i].W.rows, m.experts1[i].W.cols);
        z.experts1[i].b.resize(m.experts1[i].b.rows, 1);
    }
    for (std::size_t i = 0; i < m.experts2.size(); ++i) {
        z.experts2[i].W.resize(m.experts2[i].W.rows, m.experts2[i].W.cols);
        z.experts2[i].b.resize(m.experts2[i].b.rows, 1);
    }
    if (m.gate1) {
        z.gate1->A.resize(m.gate1->A.rows, m.gate1->A.cols);
        z.gate1->a.resize(m.gate1->a.rows, 1);
        z.gate1->B.resize(m.gate1->B.rows, m.gate1->B.cols);
        z.gate1->b.resize(m.gate1->b.rows, 1);
    }
    if (m.gate2) {
        z.gate2->A.resize(m.gate2->A.rows, m.gate2->A.cols);
        z.gate2->a.resize(m.gate2->a.rows, 1);
        z.gate2->B.resize(m.gate2->B.rows, m.gate2->B.cols);
        z.gate2->b.resize(m.gate2->b.rows, 1);
    }
    if (m.output.W.size() > 0) {
        z.output.W.resize(m.output.W.rows, m.output.W.cols);
        z.output.b.resize(m.output.b.rows, 1);
    }
    return z;
}

void zero_params(Model& m) {
    for (auto& [name, mat] : param_list(m)) mat->fill(0.0);
}

std::size_t count_params(const Model& m) {
    std::size_t n = 0;
    for (auto& [name, mat] : param_list(m)) n += mat->size();
    return n;
}

std::size_t count_params(ModelKind kind, const Arch& arch) {
    const std::size_t d = arch.input_dim, C = arch.classes;
    const std::size_t N = arch.experts1, h1 = arch.hidden1;
    const std::size_t M = arch.experts2, h2 = arch.hidden2;
    const std::size_t g1 = arch.gate_hidden1, g2 = arch.gate_hidden2;
    const std::size_t mix1 = N * (h1 * d + h1);
    const std::size_t gate1 = g1 * d + g1 + N * g1 + N;
    switch (kind) {
        case ModelKind::dmoe:
            return mix1 + gate1 + M * (h2 * h1 + h2) + (g2 * h1 + g2 + M * g2 + M) + C * h2 + C;
        case ModelKind::single_expert_l2:
            return mix1 + gate1 + (h2 * h1 + h2) + C * h2 + C;
        case ModelKind::concat_l2:
            return mix1 + gate1 + M * (h2 * h1 + h2) + C * M * h2 + C;
        case ModelKind::matched_dnn: {
            const std::size_t target = count_params(ModelKind::dmoe, arch);
            const std::size_t hm = solve_matched_hidden(target, d, h2, C);
            return d * hm + hm + hm * h2 + h2 + h2 * C + C;
        }
        case ModelKind::one_layer:
            return mix1 + gate1 + C * h1 + C;
        case ModelKind::one_layer_single:
            return h1 * d + h1 + C * h1 + C;
        case ModelKind::one_layer_concat:
            return mix1 + C * N * h1 + C;
        case ModelKind::softmax_moe:
            return mix1 + gate1 + N * (C * h1 + C);
    }
    return 0;
}

std::size_t solve_matched_hidden(std::size_t dmoe_total, std::size_t input_dim, std::size_t h2,
                                 std::size_t classes) {
    const std::size_t fixed = h2 + h2 * classes + classes;
    const std::size_t per_unit = input_dim + 1 + h2;
    if (dmoe_total < fixed + per_unit)
        throw std::invalid_argument("solve_matched_hidden: target " + std::to_string(dmoe_total) +
                                    " too small for one hidden unit");
    std::size_t h1 = (dmoe_total - fixed) / per_unit;
    auto total = [&](std::size_t h) { return input_dim * h + h + h * h2 + fixed; };
    while (total(h1 + 1) <= dmoe_total) ++h1;
    while (h1 > 1 && total(h1) > dmoe_total) --h1;
    return h1;
}

// ---------------------------------------------------------------------------
// forward

namespace {

void dense_forward(Matrix& out, const DenseLayer& l, const Matrix& X) {
    matmul_nt_into(out, X, l.W);
    add_bias_rows(out, l.b);
}

void gate_forward_batch(Matrix& H, Matrix& G, const GatingParams& gp, const Matrix& X,
                        const std::vector<std::uint8_t>* mask) {
    dense_forward(H, DenseLayer{gp.A, gp.a}, X);
    relu_inplace(H);
    matmul_nt_into(G, H, gp.B);
    add_bias_rows(G, gp.b);
    softmax_rows_inplace(G);
    if (mask && !mask->empty())
        for (std::size_t r = 0; r < G.rows; ++r)
            mask_renormalize({G.row(r), G.cols}, *mask);
}

void mixture_forward(std::vector<Matrix>& F, Matrix& Z, const std::vector<DenseLayer>& experts,
                     const Matrix& G, const Matrix& X) {
    F.resize(experts.size());
    for (std::size_t i = 0; i < experts.size(); ++i) {
        dense_forward(F[i], experts[i], X);
        relu_inplace(F[i]);
    }
    Z.resize(X.rows, experts[0].W.rows);
    for (std::size_t i = 0; i < experts.size(); ++i) add_scaled_rows(Z, G, i, F[i]);
}

void concat_forward(std::vector<Matrix>& F, Matrix& Z, const std::vector<DenseLayer>& experts,
                    const Matrix& X) {
    F.resize(experts.size());
    const std::size_t h = experts[0].W.rows;
    Z.resize(X.rows, experts.size() * h);
    for (std::size_t i = 0; i < experts.size(); ++i) {
        dense_forward(F[i], experts[i], X);
        relu_inplace(F[i]);
        for (std::size_t r = 0; r < Z.rows; ++r) {
            const double* src = F[i].row(r);
            double* dst = Z.row(r) + i * h;
            for (std::size_t c = 0; c < h; ++c) dst[c] = src[c];
        }
    }
}

}  // namespace

void forward_into(ForwardTrace& t, const Model& m, const Matrix& X, const GateMasks* masks) {
    if (X.cols != m.arch.input_dim)
        throw std::invalid_argument("forward: input has " + std::to_string(X.cols) +
                                    " columns, model expects " + std::to_string(m.arch.input_dim));
    t.batch = X.rows;
    t.X = X;
    const std::vector<std::uint8_t>* mask1 = masks ? &masks->layer1 : nullptr;
    const std::vector<std::uint8_t>* mask2 = masks ? &masks->layer2 : nullptr;
    switch (m.kind) {
        case ModelKind::dmoe:
            gate_forward_batch(t.H1, t.G1, *m.gate1, X, mask1);
            mixture_forward(t.F1, t.Z1, m.experts1, t.G1, X);
            gate_forward_batch(t.H2, t.G2, *m.gate2, t.Z1, mask2);
            mixture_forward(t.F2, t.Z2, m.experts2, t.G2, t.Z1);
            dense_forward(t.Z3, m.output, t.Z2);
            softmax_rows_inplace(t.Z3);
            break;
        case ModelKind::single_expert_l2:
            gate_forward_batch(t.H1, t.G1, *m.gate1, X, mask1);
            mixture_forward(t.F1, t.Z1, m.experts1, t.G1, X);
            t.F2.resize(1);
            dense_forward(t.F2[0], m.experts2[0], t.Z1);
            relu_inplace(t.F2[0]);
            t.Z2 = t.F2[0];
            dense_forward(t.Z3, m.output, t.Z2);
            softmax_rows_inplace(t.Z3);
            break;
        case ModelKind::concat_l2:
            gate_forward_batch(t.H1, t.G1, *m.gate1, X, mask1);
            mixture_forward(t.F1, t.Z1, m.experts1, t.G1, X);
            concat_forward(t.F2, t.Z2, m.experts2, t.Z1);
            dense_forward(t.Z3, m.output, t.Z2);
            softmax_rows_inplace(t.Z3);
            break;
        case ModelKind::matched_dnn:
            t.F1.resize(1);
            dense_forward(t.F1[0], m.experts1[0], X);
            relu_inplace(t.F1[0]);
            t.Z1 = t.F1[0];
            t.F2.resize(1);
            dense_forward(t.F2[0], m.experts2[0], t.Z1);
            relu_inplace(t.F2[0]);
            t.Z2 = t.F2[0];
            dense_forward(t.Z3, m.output, t.Z2);
            softmax_rows_inplace(t.Z3);
            break;
        case ModelKind::one_layer:
            gate_forward_batch(t.H1, t.G1, *m.gate1, X, mask1);
            mixture_forward(t.F1, t.Z1, m.experts1, t.G1, X);
            dense_forward(t.Z3, m.output, t.Z1);
            softmax_rows_inplace(t.Z3);
            break;
        case ModelKind::one_layer_single:
            t.F1.resize(1);
            dense_forward(t.F1[0], m.experts1[0], X);
            relu_inplace(t.F1[0]);
            t.Z1 = t.F1[0];
            dense_forward(t.Z3, m.output, t.Z1);
            softmax_rows_inplace(t.Z3);
            break;
        case ModelKind::one_layer_concat:
            concat_forward(t.F1, t.Z1, m.experts1, X);
            dense_forward(t.Z3, m.output, t.Z1);
            softmax_rows_inplace(t.Z3);
            break;
        case ModelKind::softmax_moe: {
            gate_forward_batch(t.H1, t.G1, *m.gate1, X, mask1);
            t.F1.resize(m.experts1.size());
            t.P.resize(m.experts1.size());
            for (std::size_t i = 0; i < m.experts1.size(); ++i) {
                dense_forward(t.F1[i], m.experts1[i], X);
                relu_inplace(t.F1[i]);
                dense_forward(t.P[i], m.experts2[i], t.F1[i]);
                softmax_rows_inplace(t.P[i]);
            }
            t.Z3.resize(X.rows, m.arch.classes);
            for (std::size_t i = 0; i < m.experts1.size(); ++i)
                add_scaled_rows(t.Z3, t.G1, i, t.P[i]);
            break;
        }
    }
}

ForwardTrace forward(const Model& m, const Matrix& X, const GateMasks* masks) {
    ForwardTrace t;
    forward_into(t, m, X, masks);
    return t;
}

double mean_loss(const ForwardTrace& t, std::span<const std::int32_t> labels) {
    if (labels.size() != t.batch)
        throw std::invalid_argument("mean_loss: label count does not match batch");
    double sum = 0.0;
    for (std::size_t r = 0; r < t.batch; ++r)
        sum += cross_entropy({t.Z3.row(r), t.Z3.cols}, labels[r]);
    return sum / static_cast<double>(t.batch);
}

// ---------------------------------------------------------------------------
// backward

namespace {

void colsum_acc(Matrix& out, const Matrix& m) {
    for (std::size_t r = 0; r < m.rows; ++r) {
        const double* mr = m.row(r);
        for (std::size_t c = 0; c < m.cols; ++c) out.data[c] += mr[c];
    }
}

void scale_rows_into(Matrix& out, const Matrix& G, std::size_t col, const Matrix& src) {
    out.resize(src.rows, src.cols);
    for (std::size_t r = 0; r < src.rows; ++r) {
        const double g = G(r, col);
        const double* s = src.row(r);
        double* o = out.row(r);
        for (std::size_t c = 0; c < src.cols; ++c) o[c] = g * s[c];
    }
}

void rowdot_into_col(Matrix& dG, std::size_t col, const Matrix& a, const Matrix& b) {
    for (std::size_t r = 0; r < a.rows; ++r) {
        const double* ar = a.row(r);
        const double* br = b.row(r);
        double acc = 0.0;
        for (std::size_t c = 0; c < a.cols; ++c) acc += ar[c] * br[c];
        dG(r, col) = acc;
    }
}

// dS for a softmax (or mask-renormalized softmax) with used output G. Masked
// entries have G = 0 and therefore get zero gradient.
void softmax_backward_rows(Matrix& dS, const Matrix& G, const Matrix& dG) {
    dS.resize(G.rows, G.cols);
    for (std::size_t r = 0; r < G.rows; ++r) {
        const double* g = G.row(r);
        const double* d = dG.row(r);
        double inner = 0.0;
        for (std::size_t c = 0; c < G.cols; ++c) inner += g[c] * d[c];
        double* o = dS.row(r);
        for (std::size_t c = 0; c < G.cols; ++c) o[c] = g[c] * (d[c] - inner);
    }
}

// Accumulate dense-layer gradients and (optionally) the input gradient.
void dense_backward(DenseLayer& g, const DenseLayer& l, const Matrix& dY, const Matrix& Xin,
                    Matrix* dXin) {
    matmul_tn_into(g.W, dY, Xin, true);
    colsum_acc(g.b, dY);
    if (dXin) matmul_nn_acc(*dXin, dY, l.W);
}

struct BackwardBuffers {
    Matrix dZ2, dZ1, dF, dG2, dS2, dH2, dG1, dS1, dH1, dP;
};

// gate backward: from dG (gradient wrt used gate values) down to the gate
// parameters, accumulating the input gradient into dXin.
void gate_backward(GatingParams& g, const GatingParams& gp, const Matrix& G, const Matrix& dG,
                   const Matrix& H, const Matrix& Xin, Matrix& dS, Matrix& dH, Matrix* dXin) {
    softmax_backward_rows(dS, G, dG);
    matmul_tn_into(g.B, dS, H, true);
    colsum_acc(g.b, dS);
    matmul_into(dH, dS, gp.B);
    relu_backward_inplace(dH, H);
    matmul_tn_into(g.A, dH, Xin, true);
    colsum_acc(g.a, dH);
    if (dXin) matmul_nn_acc(*dXin, dH, gp.A);
}

// mixture backward: dZ is the gradient wrt the mixed output; fills dG columns
// and accumulates expert parameter gradients plus the input gradient.
void mixture_backward(std::vector<DenseLayer>& gexperts, const std::vector<DenseLayer>& experts,
                      const Matrix& G, Matrix& dG, const std::vector<Matrix>& F, const Matrix& dZ,
                      const Matrix& Xin, Matrix& dF, Matrix* dXin) {
    dG.resize(dZ.rows, experts.size());
    for (std::size_t i = 0; i < experts.size(); ++i) {
        rowdot_into_col(dG, i, dZ, F[i]);
        scale_rows_into(dF, G, i, dZ);
        relu_backward_inplace(dF, F[i]);
        dense_backward(gexperts[i], experts[i], dF, Xin, dXin);
    }
}

void concat_backward(std::vector<DenseLayer>& gexperts, const std::vector<DenseLayer>& experts,
                     const std::vector<Matrix>& F, const Matrix& dZ, const Matrix& Xin, Matrix& dF,
                     Matrix* dXin) {
    const std::size_t h = experts[0].W.rows;
    for (std::size_t i = 0; i < experts.size(); ++i) {
        dF.resize(dZ.rows, h);
        for (std::size_t r = 0; r < dZ.rows; ++r) {
            const double* src = dZ.row(r) + i * h;
            double* dst = dF.row(r);
            for (std::size_t c = 0; c < h; ++c) dst[c] = src[c];
        }
        relu_backward_inplace(dF, F[i]);
        dense_backward(gexperts[i], experts[i], dF, Xin, dXin);
    }
}

}  // namespace

void backward_into(Model& grads, const Model& m, const ForwardTrace& t,
                   std::span<const std::int32_t> labels) {
    if (labels.size() != t.batch)
        throw std::invalid_argument("backward: label count does not match batch");
    zero_params(grads);
    const double inv_b = 1.0 / static_cast<double>(t.batch);
    BackwardBuffers w;

    if (m.kind == ModelKind::softmax_moe) {
        // L = -log sum_i g_i p_i[y]
        Matrix dZ3(t.batch, t.Z3.cols);
        for (std::size_t r = 0; r < t.batch; ++r) {
            const auto y = static_cast<std::size_t>(labels[r]);
            dZ3(r, y) = -inv_b / std::max(t.Z3(r, y), 1e-30);
        }
        w.dG1.resize(t.batch, m.experts1.size());
        for (std::size_t i = 0; i < m.experts1.size(); ++i) {
            rowdot_into_col(w.dG1, i, dZ3, t.P[i]);
            scale_rows_into(w.dP, t.G1, i, dZ3);
            softmax_backward_rows(w.dF, t.P[i], w.dP);
            // class map, then its input gradient drives the expert
            Matrix dFexp(t.batch, t.F1[i].cols);
            dense_backward(grads.experts2[i], m.experts2[i], w.dF, t.F1[i], &dFexp);
            relu_backward_inplace(dFexp, t.F1[i]);
            dense_backward(grads.experts1[i], m.experts1[i], dFexp, t.X, nullptr);
        }
        gate_backward(*grads.gate1, *m.gate1, t.G1, w.dG1, t.H1, t.X, w.dS1, w.dH1, nullptr);
        return;
    }

    // softmax + cross-entropy head shared by every other kind
    Matrix dU3 = t.Z3;
    for (std::size_t r = 0; r < t.batch; ++r) {
        dU3(r, static_cast<std::size_t>(labels[r])) -= 1.0;
        double* row = dU3.row(r);
        for (std::size_t c = 0; c < dU3.cols; ++c) row[c] *= inv_b;
    }

    switch (m.kind) {
        case ModelKind::dmoe: {
            w.dZ2.resize(t.batch, t.Z2.cols);
            dense_backward(grads.output, m.output, dU3, t.Z2, &w.dZ2);
            w.dZ1.resize(t.batch, t.Z1.cols);
            mixture_backward(grads.experts2, m.experts2, t.G2, w.dG2, t.F2, w.dZ2, t.Z1, w.dF,
                             &w.dZ1);
            gate_backward(*grads.gate2, *m.gate2, t.G2, w.dG2, t.H2, t.Z1, w.dS2, w.dH2, &w.dZ1);
            mixture_backward(grads.experts1, m.experts1, t.G1, w.dG1, t.F1, w.dZ1, t.X, w.dF,
                             nullptr);
            gate_backward(*grads.gate1, *m.gate1, t.G1, w.dG1, t.H1, t.X, w.dS1, w.dH1, nullptr);
            break;
        }
        case ModelKind::single_expert_l2: {
            w.dZ2.resize(t.batch, t.Z2.cols);
            dense_backward(grads.output, m.output, dU3, t.Z2, &w.dZ2);
            relu_backward_inplace(w.dZ2, t.F2[0]);
            w.dZ1.resize(t.batch, t.Z1.cols);
            dense_backward(grads.experts2[0], m.experts2[0], w.dZ2, t.Z1, &w.dZ1);
            mixture_backward(grads.experts1, m.experts1, t.G1, w.dG1, t.F1, w.dZ1, t.X, w.dF,
                             nullptr);
            gate_backward(*grads.gate1, *m.gate1, t.G1, w.dG1, t.H1, t.X, w.dS1, w.dH1, nullptr);
            break;
        }
        case ModelKind::concat_l2: {
            w.dZ2.resize(t.batch, t.Z2.cols);
            dense_backward(grads.output, m.output, dU3, t.Z2, &w.dZ2);
            w.dZ1.resize(t.batch, t.Z1.cols);
            concat_backward(grads.experts2, m.experts2, t.F2, w.dZ2, t.Z1, w.dF, &w.dZ1);
            mixture_backward(grads.experts1, m.experts1, t.G1, w.dG1, t.F1, w.dZ1, t.X, w.dF,
                             nullptr);
            gate_backward(*grads.gate1, *m.gate1, t.G1, w.dG1, t.H1, t.X, w.dS1, w.dH1, nullptr);
            break;
        }
        case ModelKind::matched_dnn: {
            w.dZ2.resize(t.batch, t.Z2.cols);
            dense_backward(grads.output, m.output, dU3, t.Z2, &w.dZ2);
            relu_backward_inplace(w.dZ2, t.F2[0]);
            w.dZ1.resize(t.batch, t.Z1.cols);
            dense_backward(grads.experts2[0], m.experts2[0], w.dZ2, t.Z1, &w.dZ1);
            relu_backward_inplace(w.dZ1, t.F1[0]);
            dense_backward(grads.experts1[0], m.experts1[0], w.dZ1, t.X, nullptr);
            break;
        }
        case ModelKind::one_layer: {
            w.dZ1.resize(t.batch, t.Z1.cols);
            dense_backward(grads.output, m.output, dU3, t.Z1, &w.dZ1);
            mixture_backward(grads.experts1, m.experts1, t.G1, w.dG1, t.F1, w.dZ1, t.X, w.dF,
                             nullptr);
            gate_backward(*grads.gate1, *m.gate1, t.G1, w.dG1, t.H1, t.X, w.dS1, w.dH1, nullptr);
            break;
        }
        case ModelKind::one_layer_single: {
            w.dZ1.resize(t.batch, t.Z1.cols);
            dense_backward(grads.output, m.output, dU3, t.Z1, &w.dZ1);
            relu_backward_inplace(w.dZ1, t.F1[0]);
            dense_backward(grads.experts1[0], m.experts1[0], w.dZ1, t.X, nullptr);
            break;
        }
        case ModelKind::one_layer_concat: {
            w.dZ1.resize(t.batch, t.Z1.cols);
            dense_backward(grads.output, m.output, dU3, t.Z1, &w.dZ1);
            concat_backward(grads.experts1, m.experts1, t.F1, w.dZ1, t.X, w.dF, nullptr);
            break;
        }
        case ModelKind::softmax_moe:
            break;  // handled above
    }
}

Model backward(const Model& m, const ForwardTrace& t, std::span<const std::int32_t> labels) {
    Model grads = zeros_like(m);
    backward_into(grads, m, t, labels);
    return grads;
}

std::pair<std::vector<double>, std::vector<double>> gating_forward(const GatingParams& g,
                                                                   std::span<const double> input) {
    Matrix X(1, input.size());
    for (std::size_t i = 0; i < input.size(); ++i) X.data[i] = input[i];
    Matrix H, G;
    gate_forward_batch(H, G, g, X, nullptr);
    return {std::vector<double>(G.data.begin(), G.data.end()),
            std::vector<double>(H.data.begin(), H.data.end())};
}

std::vector<std::int32_t> predict(const Matrix& probabilities) {
    std::vector<std::int32_t> out(probabilities.rows, 0);
    for (std::size_t r = 0; r < probabilities.rows; ++r) {
        const double* p = probabilities.row(r);
        std::size_t best = 0;
        for (std::size_t c = 1; c < probabilities.cols; ++c)
            if (p[c] > p[best]) best = c;
        out[r] = static_cast<std::int32_t>(best);
    }
    return out;
}

}  // namespace dmoe
