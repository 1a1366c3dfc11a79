#pragma once

// Naive double-precision forward pass used only as a test oracle. It reads
// the weight store by name and shares no arithmetic with steerlab::forward.

#include <cmath>
#include <string>
#include <vector>

#include "steerlab/model.hpp"

namespace steerlab::testing {

using Matrix = std::vector<std::vector<double>>;

inline Matrix to_matrix(const Tensor& t)
{
    Matrix m(t.shape[0], std::vector<double>(t.shape.size() > 1 ? t.shape[1] : 1));
    for (std::size_t r = 0; r < m.size(); ++r) {
        for (std::size_t c = 0; c < m[r].size(); ++c) m[r][c] = t.data[r * m[r].size() + c];
    }
    return m;
}

inline std::vector<double> to_vec(const Tensor& t) { return {t.data.begin(), t.data.end()}; }

inline Matrix matmul(const Matrix& a, const Matrix& b)
{
    Matrix out(a.size(), std::vector<double>(b[0].size(), 0.0));
    for (std::size_t i = 0; i < a.size(); ++i) {
        for (std::size_t j = 0; j < b[0].size(); ++j) {
            double s = 0.0;
            for (std::size_t k = 0; k < b.size(); ++k) s += a[i][k] * b[k][j];
            out[i][j] = s;
        }
    }
    return out;
}

inline void add_bias(Matrix& m, const std::vector<double>& b)
{
    for (auto& row : m) {
        for (std::size_t j = 0; j < row.size(); ++j) row[j] += b[j];
    }
}

inline Matrix norm_rows(const Matrix& x, const std::vector<double>& g, const std::vector<double>& b, double eps)
{
    Matrix out = x;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double n = static_cast<double>(x[i].size());
        double mu = 0.0;
        for (double v : x[i]) mu += v / n;
        double var = 0.0;
        for (double v : x[i]) var += (v - mu) * (v - mu) / n;
        for (std::size_t j = 0; j < x[i].size(); ++j) out[i][j] = (x[i][j] - mu) / std::sqrt(var + eps) * g[j] + b[j];
    }
    return out;
}

/// Logits [seq][vocab] for `tokens` with no hooks.
inline Matrix reference_forward(const Model& model, const TokenSequence& tokens)
{
    const ModelConfig& cfg = model.config();
    const std::size_t T = tokens.size(), D = cfg.d_model, H = cfg.n_heads, hd = D / H;
    const Matrix wte = to_matrix(model.weight("wte"));
    const Matrix wpe = to_matrix(model.weight("wpe"));

    Matrix x(T, std::vector<double>(D));
    for (std::size_t t = 0; t < T; ++t) {
        for (std::size_t j = 0; j < D; ++j) x[t][j] = wte[tokens[t]][j] + wpe[t][j];
    }

    for (std::size_t l = 0; l < cfg.n_layers; ++l) {
        const std::string p = "blocks." + std::to_string(l) + ".";
        auto w = [&](const char* leaf) { return model.weight(p + leaf); };

        Matrix a = norm_rows(x, to_vec(w("ln1.weight")), to_vec(w("ln1.bias")), cfg.ln_epsilon);
        Matrix qkv = matmul(a, to_matrix(w("attn.qkv.weight")));
        add_bias(qkv, to_vec(w("attn.qkv.bias")));

        Matrix z(T, std::vector<double>(D, 0.0));
        for (std::size_t h = 0; h < H; ++h) {
            for (std::size_t i = 0; i < T; ++i) {
                std::vector<double> logits(i + 1);
                double top = -1e300;
                for (std::size_t j = 0; j <= i; ++j) {
                    double s = 0.0;
                    for (std::size_t c = 0; c < hd; ++c) s += qkv[i][h * hd + c] * qkv[j][D + h * hd + c];
                    logits[j] = s / std::sqrt(static_cast<double>(hd));
                    top = std::max(top, logits[j]);
                }
                double total = 0.0;
                for (double& v : logits) total += (v = std::exp(v - top));
                for (std::size_t j = 0; j <= i; ++j) {
                    for (std::size_t c = 0; c < hd; ++c) z[i][h * hd + c] += logits[j] / total * qkv[j][2 * D + h * hd + c];
                }
            }
        }
        Matrix attn = matmul(z, to_matrix(w("attn.out.weight")));
        add_bias(attn, to_vec(w("attn.out.bias")));
        for (std::size_t t = 0; t < T; ++t) {
            for (std::size_t j = 0; j < D; ++j) x[t][j] += attn[t][j];
        }

        Matrix m = norm_rows(x, to_vec(w("ln2.weight")), to_vec(w("ln2.bias")), cfg.ln_epsilon);
        Matrix hidden = matmul(m, to_matrix(w("mlp.in.weight")));
        add_bias(hidden, to_vec(w("mlp.in.bias")));
        for (auto& row : hidden) {
            for (double& v : row) v = 0.5 * v * (1.0 + std::tanh(std::sqrt(2.0 / M_PI) * (v + 0.044715 * v * v * v)));
        }
        Matrix mlp = matmul(hidden, to_matrix(w("mlp.out.weight")));
        add_bias(mlp, to_vec(w("mlp.out.bias")));
        for (std::size_t t = 0; t < T; ++t) {
            for (std::size_t j = 0; j < D; ++j) x[t][j] += mlp[t][j];
        }
    }
    const Matrix f = norm_rows(x, to_vec(model.weight("ln_f.weight")), to_vec(model.weight("ln_f.bias")), cfg.ln_epsilon);
    return matmul(f, to_matrix(model.weight("unembed")));
}

}  // namespace steerlab::testing
