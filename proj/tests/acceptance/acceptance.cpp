// Copyright (C) 2026 Persona contributors
// SPDX-License-Identifier: Apache-2.0
//
// Acceptance suite. Prints one PASS/FAIL line per criterion; `--only N` runs a
// single criterion. Oracles are written independently of the library code.

#include "persona/adapters.hpp"
#include "persona/checkpoint.hpp"
#include "persona/fusion.hpp"
#include "persona/layout.hpp"
#include "persona/matching_attention.hpp"
#include "persona/metrics.hpp"
#include "persona/pipeline.hpp"
#include "persona/random.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <memory>
#include <random>
#include <sstream>
#include <string>

#include <unistd.h>

namespace fs = std::filesystem;
using namespace persona;

namespace {

struct Outcome {
    bool pass = true;
    std::ostringstream detail;
    std::string failures;

    void check(bool ok, const std::string& what) {
        if (!ok) {
            pass = false;
            failures += " [failed: " + what + "]";
        }
    }
};

double rel_err(const Matrix& a, const Matrix& b) {
    const double denom = std::max(b.norm(), 1e-300);
    return (a - b).norm() / denom;
}

Matrix rand_matrix(std::mt19937_64& rng, Eigen::Index r, Eigen::Index c, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> u(lo, hi);
    Matrix m(r, c);
    for (Eigen::Index i = 0; i < r; ++i)
        for (Eigen::Index j = 0; j < c; ++j) m(i, j) = u(rng);
    return m;
}

// ---------------------------------------------------------------- 1 ---------

struct F1Row {
    const char* table;
    const char* method;
    double dino, clip_t, f1;
};

// DINO, CLIP-T and F1 columns exactly as printed.
constexpr F1Row kF1Rows[] = {
    {"single", "DreamBooth", 0.684, 0.271, 0.388},     {"single", "Custom Diffusion", 0.503, 0.313, 0.613},
    {"single", "DisenBooth", 0.616, 0.297, 0.674},     {"single", "ED-LoRA", 0.667, 0.281, 0.685},
    {"single", "LoKr", 0.679, 0.275, 0.683},           {"single", "ours (single)", 0.682, 0.282, 0.694},
    {"multi", "Mix-of-Show", 0.436, 0.312, 0.559},     {"multi", "Custom Diffusion", 0.369, 0.32, 0.505},
    {"multi", "FreeCustom", 0.360, 0.289, 0.480},      {"multi", "OMG", 0.357, 0.292, 0.480},
    {"multi", "ours (multi)", 0.454, 0.314, 0.575},
};

Outcome criterion_metric_arithmetic() {
    Outcome o;
    int ok = 0;
    for (const auto& r : kF1Rows) {
        const double got = metrics::f1_score(r.dino, r.clip_t);
        if (std::abs(got - r.f1) <= 1e-3) {
            ++ok;
        } else {
            char buf[200];
            std::snprintf(buf, sizeof buf, "%s/%s: f1(%.3f, %.3f) = %.4f, printed %.3f", r.table, r.method, r.dino,
                          r.clip_t, got, r.f1);
            o.check(false, buf);
        }
    }
    o.detail << ok << "/" << std::size(kF1Rows) << " table rows within 0.001";
    return o;
}

// ---------------------------------------------------------------- 2 ---------

Matrix kron_oracle(const Matrix& A, const Matrix& B) {
    Matrix K(A.rows() * B.rows(), A.cols() * B.cols());
    for (Eigen::Index i = 0; i < A.rows(); ++i)
        for (Eigen::Index j = 0; j < A.cols(); ++j)
            for (Eigen::Index p = 0; p < B.rows(); ++p)
                for (Eigen::Index q = 0; q < B.cols(); ++q) K(i * B.rows() + p, j * B.cols() + q) = A(i, j) * B(p, q);
    return K;
}

// Central differences of sum(W' .* R) with respect to one parameter.
Matrix fd_gradient(const std::function<double(const Matrix&)>& f, const Matrix& x, double h = 1e-6) {
    Matrix g(x.rows(), x.cols());
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        Matrix xp = x, xm = x;
        xp.data()[i] += h;
        xm.data()[i] -= h;
        g.data()[i] = (f(xp) - f(xm)) / (2.0 * h);
    }
    return g;
}

Outcome criterion_adapter_algebra() {
    Outcome o;
    std::mt19937_64 rng(2024);
    const int dims[] = {4, 6, 8, 9, 10, 12, 14, 15, 16};
    std::uniform_int_distribution<int> pick(0, static_cast<int>(std::size(dims)) - 1);
    int instances = 0;
    double worst_mixed = 0, worst_init = 0, worst_unit = 0, worst_fd = 0;
    while (instances < 120) {
        const int d = dims[pick(rng)], k = dims[pick(rng)];
        std::vector<int> common;
        for (int f = 2; f <= std::min(d, k); ++f)
            if (d % f == 0 && k % f == 0) common.push_back(f);
        if (common.empty()) continue;
        const int f = common[std::uniform_int_distribution<std::size_t>(0, common.size() - 1)(rng)];
        ++instances;

        // Mixed product (A (x) B)(C (x) D) = AC (x) BD, against the loop oracle.
        const Matrix A = rand_matrix(rng, f, f), B = rand_matrix(rng, d / f, k / f);
        const Matrix C = rand_matrix(rng, f, 3), D = rand_matrix(rng, k / f, 2);
        worst_mixed = std::max(worst_mixed, rel_err(adapters::kron_product(A, B) * adapters::kron_product(C, D),
                                                    kron_oracle(A * C, B * D)));
        worst_mixed = std::max(worst_mixed, rel_err(adapters::kron_product(A, B), kron_oracle(A, B)));

        // Initialization is a no-op.
        adapters::BaseWeight base{"layer", rand_matrix(rng, d, k)};
        auto ad = adapters::init_krona_wed(base, f, rng());
        worst_init = std::max(worst_init, rel_err(adapters::effective_weight(ad), base.W0));

        // Trained-like state: directions have unit columns.
        ad.kron.A = rand_matrix(rng, ad.kron.A.rows(), ad.kron.A.cols());
        ad.kron.B = rand_matrix(rng, ad.kron.B.rows(), ad.kron.B.cols());
        ad.m = rand_matrix(rng, 1, k, 0.5, 2.0);
        const Matrix dir = adapters::direction(ad);
        for (Eigen::Index j = 0; j < k; ++j) worst_unit = std::max(worst_unit, std::abs(dir.col(j).norm() - 1.0));

        // Gradients of a random linear probe of W' against central differences.
        const Matrix R = rand_matrix(rng, d, k);
        auto value = [&](const Matrix& a, const Matrix& b, const Matrix& m) {
            const Matrix V = base.W0 + kron_oracle(a, b);
            Matrix W(d, k);
            for (Eigen::Index j = 0; j < k; ++j) W.col(j) = m(0, j) * V.col(j) / std::max(V.col(j).norm(), 1e-8);
            return (W.array() * R.array()).sum();
        };
        auto pA = ag::Var::parameter(ad.kron.A), pB = ag::Var::parameter(ad.kron.B), pm = ag::Var::parameter(ad.m);
        auto W = adapters::effective_weight(ag::Var::constant(base.W0), pA, pB, pm);
        ag::sum(ag::mul(W, ag::Var::constant(R))).backward();
        const Matrix gA = fd_gradient([&](const Matrix& x) { return value(x, ad.kron.B, ad.m); }, ad.kron.A);
        const Matrix gB = fd_gradient([&](const Matrix& x) { return value(ad.kron.A, x, ad.m); }, ad.kron.B);
        const Matrix gm = fd_gradient([&](const Matrix& x) { return value(ad.kron.A, ad.kron.B, x); }, ad.m);
        worst_fd = std::max({worst_fd, rel_err(pA.grad(), gA), rel_err(pB.grad(), gB), rel_err(pm.grad(), gm)});
    }
    o.check(worst_mixed <= 1e-12, "mixed-product identity");
    o.check(worst_init <= 1e-12, "init no-op");
    o.check(worst_unit <= 1e-12, "unit-column direction");
    o.check(worst_fd <= 1e-3, "finite-difference gradients");
    o.detail << instances << " instances; max rel err: mixed " << worst_mixed << ", init " << worst_init
             << ", |norm-1| " << worst_unit << ", fd " << worst_fd;
    return o;
}

// ---------------------------------------------------------------- 3 ---------

// Stacked least squares [X_1 .. X_N, sqrt(mu) I]^T dW^T = [(dW_1 X_1)^T; ...; 0]
// solved by column-pivoted QR.
Matrix fusion_oracle(const std::vector<Matrix>& deltas, const std::vector<Matrix>& acts, double mu) {
    const Eigen::Index d = deltas[0].rows(), k = deltas[0].cols();
    Eigen::Index rows = mu > 0 ? k : 0;
    for (const auto& X : acts) rows += X.cols();
    Matrix lhs = Matrix::Zero(rows, k), rhs = Matrix::Zero(rows, d);
    Eigen::Index r = 0;
    for (std::size_t n = 0; n < deltas.size(); ++n) {
        lhs.middleRows(r, acts[n].cols()) = acts[n].transpose();
        rhs.middleRows(r, acts[n].cols()) = (deltas[n] * acts[n]).transpose();
        r += acts[n].cols();
    }
    if (mu > 0) lhs.bottomRows(k) = std::sqrt(mu) * Matrix::Identity(k, k);
    return lhs.colPivHouseholderQr().solve(rhs).transpose();
}

struct Trained {
    testbed::ToyDenoiser model;
    std::map<std::string, pipeline::TrainResult> runs;
    std::map<std::string, testbed::SynthConceptDataset> data;

    const testbed::SynthConceptDataset& dataset(const std::string& name) {
        auto it = data.find(name);
        if (it != data.end()) return it->second;
        testbed::DatasetSpec spec;
        spec.subject = testbed::builtin_shape(name);
        return data.emplace(name, testbed::make_dataset(spec, 11)).first->second;
    }

    // Cached by (concept, lambda_attn, steps).
    const pipeline::TrainResult& train(const std::string& name, double lambda_attn, int steps = 50) {
        const std::string key = name + "/" + std::to_string(lambda_attn) + "/" + std::to_string(steps);
        auto it = runs.find(key);
        if (it != runs.end()) return it->second;
        RunConfig c;
        c.concept_name = name;
        c.dataset_concept = name;
        c.lambda_attn = lambda_attn;
        c.train_steps = steps;
        return runs.emplace(key, pipeline::train_single(c, dataset(name), model)).first->second;
    }
};

Trained& trained() {
    static Trained t{testbed::ToyDenoiser(RunConfig{}.model_config()), {}, {}};
    return t;
}

Outcome criterion_fusion() {
    Outcome o;
    std::mt19937_64 rng(77);
    double worst = 0;
    for (int trial = 0; trial < 50; ++trial) {
        const int N = 1 + trial % 3;
        fusion::FusionProblem p;
        for (int n = 0; n < N; ++n) {
            p.deltas.push_back(rand_matrix(rng, 8, 8));
            p.activations.push_back(rand_matrix(rng, 8, 4 + trial % 9));
        }
        p.mu = trial % 2 ? 1e-3 : fusion::default_mu(p.activations);
        worst = std::max(worst, rel_err(fusion::fuse_layer(p), fusion_oracle(p.deltas, p.activations, p.mu)));
    }
    o.check(worst <= 1e-5, "dense least-squares oracle");

    // N = 1 without regularization recovers the update from full-rank activations.
    fusion::FusionProblem single;
    single.deltas = {rand_matrix(rng, 8, 8)};
    single.activations = {rand_matrix(rng, 8, 16)};
    single.mu = 0.0;
    const double single_err = rel_err(fusion::fuse_layer(single), single.deltas[0]);
    o.check(single_err <= 1e-10, "single-update layer fusion");

    // N = 1 model fusion copies the adapter update bit for bit.
    auto& t = trained();
    const auto& ck = t.train("redring", 0.001, 5).checkpoint;
    const std::vector<AdapterCheckpoint> one = {ck};
    const auto fused = fusion::fuse_model(t.model, one);
    bool exact = fused.deltas.size() == ck.deltas().size();
    for (const auto& [layer, delta] : ck.deltas()) exact = exact && bitwise_equal(fused.deltas.at(layer), delta);
    o.check(exact, "single-adapter model fusion is exact");

    // Identity covariance: X_n X_n^T = I for both concepts gives the mean update.
    const Matrix Q1 = rand_matrix(rng, 8, 8).householderQr().householderQ();
    const Matrix Q2 = rand_matrix(rng, 8, 8).householderQr().householderQ();
    fusion::FusionProblem two;
    two.deltas = {rand_matrix(rng, 8, 8), rand_matrix(rng, 8, 8)};
    two.activations = {Q1, Q2};
    two.mu = 0.0;
    const double avg_err = rel_err(fusion::fuse_layer(two), 0.5 * (two.deltas[0] + two.deltas[1]));
    o.check(avg_err <= 1e-10, "identity-covariance average");
    o.detail << "50 random 8x8 problems, max rel err " << worst << "; N=1 layer err " << single_err
             << "; N=1 model bitwise " << (exact ? "yes" : "no") << "; average err " << avg_err;
    return o;
}

// ---------------------------------------------------------------- 4 ---------

Outcome criterion_sama() {
    Outcome o;
    // Zero masks leave the target branch untouched, bit for bit.
    auto& t = trained();
    const auto& model = t.model;
    const auto registry = make_registry(model, {});
    const Matrix context = model.text_features(registry, concepts::bind_prompt(registry, "a photo of a ring"));
    const testbed::BaseWeights weights;
    testbed::Sampler plain(model, weights, context, 8);
    const auto reference = plain.run(5);
    testbed::Sampler injected(model, weights, context, 8);
    const int N = model.locations(), C = model.config().width;
    injected.add_hook(testbed::kHookForward, [&](testbed::StepContext& ctx) {
        const Matrix zero = Matrix::Zero(N, 1);
        const Matrix ref_values = Matrix::Constant(N, C, 3.0);
        std::vector<int> flow(N, 0);
        const std::vector<Matrix> warped = {matching::warp_values(ref_values, flow, zero)};
        const std::vector<Matrix> masks = {zero};
        for (const auto& [layer, res] : model.self_attention_layers()) {
            if (res == model.config().latent_side) ctx.options.injections[layer] = matching::make_injection(warped, masks, N, C);
        }
    });
    const auto with_zero = injected.run(5);
    bool identical = reference.size() == with_zero.size();
    for (std::size_t i = 0; identical && i < reference.size(); ++i) identical = bitwise_equal(reference[i], with_zero[i]);
    o.check(identical, "zero-mask pipeline bit-identical");

    std::mt19937_64 rng(31);
    double worst = 0;
    bool flow_ok = true;
    for (int trial = 0; trial < 200; ++trial) {
        const int L = 1 + trial % 16, Ch = 1 + trial % 5;
        const Matrix trg = rand_matrix(rng, L, Ch), ref = rand_matrix(rng, L, Ch);
        Matrix mask = rand_matrix(rng, L, 1, 0.0, 1.0);
        for (int x = 0; x < L; ++x)
            if (x % 3 == 0) mask(x, 0) = 0.0;
        if (trial % 7 == 0) mask.setOnes();
        Matrix ref_copy = ref;
        if (trial % 11 == 0) ref_copy.row(0).setZero();

        // Cost volume: double-loop cosine between masked target and reference rows.
        Matrix oc = Matrix::Zero(L, L);
        for (int x = 0; x < L; ++x)
            for (int y = 0; y < L; ++y) {
                double dot = 0, nx = 0, ny = 0;
                for (int c = 0; c < Ch; ++c) {
                    const double a = trg(x, c) * mask(x, 0), b = ref_copy(y, c);
                    dot += a * b;
                    nx += a * a;
                    ny += b * b;
                }
                nx = std::sqrt(nx);
                ny = std::sqrt(ny);
                oc(x, y) = (nx < 1e-12 || ny < 1e-12) ? 0.0 : dot / (nx * ny);
            }
        const Matrix cost = matching::cost_volume(trg, ref_copy, mask);
        worst = std::max(worst, (cost - oc).cwiseAbs().maxCoeff());

        // Flow: linear scan keeping the first maximum.
        const auto flow = matching::semantic_flow(cost);
        for (int x = 0; x < L; ++x) {
            int best = 0;
            for (int y = 1; y < L; ++y)
                if (cost(x, y) > cost(x, best)) best = y;
            flow_ok = flow_ok && flow[x] == best;
        }

        // Warp: gather then mask.
        const Matrix vref = rand_matrix(rng, L, Ch);
        const Matrix warped = matching::warp_values(vref, flow, mask);
        for (int x = 0; x < L; ++x)
            for (int c = 0; c < Ch; ++c) worst = std::max(worst, std::abs(warped(x, c) - vref(flow[x], c) * mask(x, 0)));

        // Aggregate with two concepts: sum of warped plus clipped complement.
        const Matrix mask2 = rand_matrix(rng, L, 1, 0.0, 1.0);
        const Matrix warped2 = rand_matrix(rng, L, Ch);
        const Matrix vtrg = rand_matrix(rng, L, Ch);
        const std::vector<Matrix> ws = {warped, warped2}, ms = {mask, mask2};
        const Matrix agg = matching::aggregate_values(ws, vtrg, ms);
        for (int x = 0; x < L; ++x) {
            const double msum = std::clamp(mask(x, 0) + mask2(x, 0), 0.0, 1.0);
            for (int c = 0; c < Ch; ++c) {
                const double expect = warped(x, c) + warped2(x, c) + vtrg(x, c) * (1.0 - msum);
                worst = std::max(worst, std::abs(agg(x, c) - expect));
            }
        }
    }
    o.check(worst <= 1e-6, "cost/warp/aggregate oracles");
    o.check(flow_ok, "flow linear-scan oracle");
    o.detail << "zero-mask trajectory bitwise " << (identical ? "yes" : "no") << "; 200 grids <= 16 locations, max abs err "
             << worst << ", flow " << (flow_ok ? "exact" : "mismatch");
    return o;
}

// ---------------------------------------------------------------- 5 ---------

double iou_oracle(const Matrix& a, const Matrix& b) {
    double inter = 0, uni = 0;
    for (Eigen::Index i = 0; i < a.size(); ++i) {
        inter += a.data()[i] * b.data()[i];
        uni += std::max(a.data()[i], b.data()[i]);
    }
    return uni == 0.0 ? 1.0 : inter / uni;
}

Outcome criterion_layout() {
    Outcome o;
    std::mt19937_64 rng(5);
    Matrix bin(4, 4);
    bin << 1, 0, 0, 1, 0, 1, 1, 0, 1, 1, 0, 0, 0, 0, 1, 1;
    const Matrix inv = Matrix::Ones(4, 4) - bin;
    const std::vector<Matrix> same = {bin, inv};
    const double l_same = layout::layout_loss(same, same);
    const std::vector<Matrix> swapped = {inv, bin};
    const double l_disjoint = layout::layout_loss(same, swapped);
    Matrix cur(2, 2), anc(2, 2);
    cur << 1, 0, 0, 0;
    anc << 1, 0, 1, 0;
    const std::vector<Matrix> c1 = {cur}, a1 = {anc};
    const double l_worked = layout::layout_loss(c1, a1);
    o.check(l_same == 0.0, "identical maps give 0");
    o.check(std::abs(l_disjoint - 2.0) <= 1e-12, "disjoint maps give K");
    o.check(std::abs(l_worked - 0.5) <= 1e-12, "worked 2x2 case");

    bool bounded = true;
    double worst_oracle = 0;
    for (int trial = 0; trial < 1000; ++trial) {
        const int K = 1 + trial % 3;
        std::vector<Matrix> a, b;
        double expect = 0;
        for (int k = 0; k < K; ++k) {
            a.push_back(rand_matrix(rng, 4, 4, 0.0, 1.0));
            b.push_back(rand_matrix(rng, 4, 4, 0.0, 1.0));
            if (trial % 5 == 0) a.back() = (a.back().array() > 0.5).cast<double>();
            expect += 1.0 - iou_oracle(a.back(), b.back());
        }
        const double l = layout::layout_loss(a, b);
        bounded = bounded && l >= 0.0 && l <= K;
        worst_oracle = std::max(worst_oracle, std::abs(l - expect));
    }
    o.check(bounded, "0 <= L <= K");
    o.check(worst_oracle <= 1e-9, "elementwise sum oracle");

    // Gradient w.r.t. the current maps, with every pair kept at least 0.05 apart.
    double worst_fd = 0;
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<Matrix> cur_m, anc_m;
        for (int k = 0; k < 2; ++k) {
            Matrix c = rand_matrix(rng, 4, 4, 0.0, 1.0), a = rand_matrix(rng, 4, 4, 0.0, 1.0);
            for (Eigen::Index i = 0; i < c.size(); ++i)
                if (std::abs(c.data()[i] - a.data()[i]) < 0.05) c.data()[i] = std::fmod(a.data()[i] + 0.3, 1.0);
            cur_m.push_back(c);
            anc_m.push_back(a);
        }
        std::vector<ag::Var> cv = {ag::Var::parameter(cur_m[0]), ag::Var::parameter(cur_m[1])};
        std::vector<ag::Var> av = {ag::Var::constant(anc_m[0]), ag::Var::constant(anc_m[1])};
        layout::layout_loss(cv, av).backward();
        for (int k = 0; k < 2; ++k) {
            const Matrix g = fd_gradient(
                [&](const Matrix& x) {
                    double l = 0;
                    for (int j = 0; j < 2; ++j) l += 1.0 - iou_oracle(j == k ? x : cur_m[j], anc_m[j]);
                    return l;
                },
                cur_m[k]);
            worst_fd = std::max(worst_fd, rel_err(cv[k].grad(), g));
        }
    }
    o.check(worst_fd <= 1e-3, "finite-difference gradient");
    o.detail << "identical " << l_same << ", disjoint " << l_disjoint << ", worked " << l_worked
             << "; 1000 random pairs bounded " << (bounded ? "yes" : "no") << " (oracle err " << worst_oracle
             << "); fd rel err " << worst_fd;
    return o;
}

// ---------------------------------------------------------------- 6 ---------

Outcome criterion_end_to_end() {
    Outcome o;
    auto& t = trained();
    const auto& ar = t.train("redring", 0.001);
    o.check(ar.probe_final.total < ar.probe_initial.total, "(a) total loss decreases");
    o.detail << "(a) probe total " << ar.probe_initial.total << " -> " << ar.probe_final.total << " (logged step 1 "
             << ar.log.front().total << ", step " << ar.log.back().step << " " << ar.log.back().total << ")";

    const auto& no_ar = t.train("redring", 0.0);
    const auto mass_ar = pipeline::off_mask_attention_mass(t.model, ar.checkpoint, t.dataset("redring"));
    const auto mass_no = pipeline::off_mask_attention_mass(t.model, no_ar.checkpoint, t.dataset("redring"));
    const double ar_mass = mass_ar.rand_off_mask + mass_ar.class_off_mask;
    const double no_mass = mass_no.rand_off_mask + mass_no.class_off_mask;
    o.check(ar_mass < no_mass, "(b) off-mask attention lower with regularization");
    o.detail << "; (b) off-mask mass " << ar_mass << " vs " << no_mass << " without AR";

    const auto& blue = t.train("bluesquare", 0.001);
    const std::vector<AdapterCheckpoint> both = {ar.checkpoint, blue.checkpoint};
    const auto fused = fusion::fuse_model(t.model, both);
    pipeline::MultiOptions on;
    pipeline::MultiOptions off = on;
    off.sama = false;
    off.guidance = false;
    const std::string prompt = "a photo of <redring> and <bluesquare>";
    const double iou_on = pipeline::generate_multi(t.model, fused, prompt, on).final_iou();
    const double iou_off = pipeline::generate_multi(t.model, fused, prompt, off).final_iou();
    o.check(iou_on > iou_off, "(c) final IoU higher with SAMA and guidance");
    o.detail << "; (c) final IoU " << iou_on << " vs " << iou_off << " with both disabled";
    return o;
}

// ---------------------------------------------------------------- 7 ---------

Outcome criterion_determinism() {
    Outcome o;
    const testbed::ToyDenoiser model(RunConfig{}.model_config());
    testbed::DatasetSpec spec;
    spec.subject = testbed::builtin_shape("greentriangle");
    const auto ds = testbed::make_dataset(spec, 3);
    RunConfig c;
    c.concept_name = "greentriangle";
    c.train_steps = 8;
    const auto r1 = pipeline::train_single(c, ds, model);
    const auto r2 = pipeline::train_single(c, ds, model);
    o.check(r1.checkpoint.to_archive() == r2.checkpoint.to_archive(), "same-seed training bit-identical");

    const auto registry = make_registry(model, r1.checkpoint.concepts);
    const auto weights = materialize(model, r1.checkpoint.deltas());
    const auto g1 = pipeline::generate_single(model, weights, registry, "a photo of <greentriangle>", 10, 4);
    const auto g2 = pipeline::generate_single(model, weights, registry, "a photo of <greentriangle>", 10, 4);
    o.check(bitwise_equal(g1.latent, g2.latent) && g1.image == g2.image, "same-seed generation bit-identical");

    const fs::path dir = fs::temp_directory_path() / ("persona_acceptance_" + std::to_string(::getpid()));
    fs::create_directories(dir);
    r1.checkpoint.save(dir / "adapter.pnar");
    const auto back = AdapterCheckpoint::load(dir / "adapter.pnar", model);
    o.check(back.to_archive() == r1.checkpoint.to_archive(), "adapter checkpoint round-trip");

    const auto& other = trained().train("redring", 0.001, 5).checkpoint;
    const std::vector<AdapterCheckpoint> pair = {r1.checkpoint, other};
    const auto fused = fusion::fuse_model(model, pair);
    fused.save(dir / "fused.pnar");
    const auto fback = FusedModel::load(dir / "fused.pnar", model);
    o.check(fback.to_archive() == fused.to_archive(), "fused checkpoint round-trip");

    pipeline::MultiOptions mo;
    mo.steps = 8;
    const auto m1 = pipeline::generate_multi(model, fused, "a photo of <greentriangle> and <redring>", mo);
    const auto m2 = pipeline::generate_multi(model, fback, "a photo of <greentriangle> and <redring>", mo);
    o.check(bitwise_equal(m1.output.latent, m2.output.latent), "multi-concept generation bit-identical");
    fs::remove_all(dir);
    o.detail << "training, single and multi-concept generation repeat bitwise; adapter and fused archives "
                "round-trip bitwise";
    return o;
}

struct Criterion {
    int id;
    const char* name;
    double budget_s;
    Outcome (*run)();
};

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"persona acceptance suite"};
    int only = 0;
    app.add_option("--only", only, "Run a single criterion (1-7)")->check(CLI::Range(1, 7));
    CLI11_PARSE(app, argc, argv);

    const Criterion criteria[] = {
        {1, "metric arithmetic", 1.0, criterion_metric_arithmetic},
        {2, "adapter algebra", 30.0, criterion_adapter_algebra},
        {3, "fusion oracle", 10.0, criterion_fusion},
        {4, "matching attention oracles", 10.0, criterion_sama},
        {5, "layout-loss properties", 10.0, criterion_layout},
        {6, "end-to-end testbed behavior", 300.0, criterion_end_to_end},
        {7, "determinism and persistence", 60.0, criterion_determinism},
    };
    int failed = 0;
    for (const auto& c : criteria) {
        if (only && c.id != only) continue;
        const auto t0 = std::chrono::steady_clock::now();
        Outcome out;
        try {
            out = c.run();
        } catch (const std::exception& e) {
            out.check(false, std::string("exception: ") + e.what());
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        if (secs > c.budget_s) out.check(false, "runtime budget exceeded");
        std::printf("criterion %d  %-4s  %-28s %7.2fs  %s\n", c.id, out.pass ? "PASS" : "FAIL", c.name, secs,
                    (out.detail.str() + out.failures).c_str());
        std::fflush(stdout);
        failed += out.pass ? 0 : 1;
    }
    return failed == 0 ? 0 : 1;
}
