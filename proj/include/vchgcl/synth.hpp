#pragma once

// Synthetic multiple-choice data with a planted commonsense signal and a
// spurious co-occurrence cue.
//
// Every concept k owns a token embedding (text side) and a code vector. In
// each frame one "signal" object carries the correct answer's code in its
// commonsense features (slots [signal_begin, signal_end) of f_vc) plus a
// salience flag in the last f_vc slot. A "context" object whose box overlaps
// the signal object carries a cue in its object features: with probability
// spurious_strength the cue is the code of a wrong candidate, otherwise the
// code of a concept that is not among the candidates. Object features are
// otherwise noise, and wider than the commonsense features.

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <random>
#include <vector>

#include "vchgcl/parameters.hpp"
#include "vchgcl/pipeline.hpp"

namespace vchgcl {

struct SynthSpec {
    std::size_t n_train = 2000;
    std::size_t n_eval = 500;
    std::size_t T = 4;          // frames (1 in image mode)
    std::size_t N = 4;          // objects per frame
    std::size_t M_q = 6;        // question tokens
    std::size_t C = 4;          // candidates
    std::size_t answer_len = 1; // tokens per candidate
    std::size_t vocab = 16;     // answer concepts
    double spurious_strength = 0.5;
    std::size_t signal_begin = 0;
    std::size_t signal_end = 6;
    std::size_t d_o = 32;
    std::size_t d_vc = 8;
    std::size_t d_ap = 8;
    std::size_t d_t = 8;
    double signal_noise = 0.1;  // std of the planted code
    double vc_noise = 0.3;      // std of commonsense slots not carrying the code
    double object_noise = 0.5;  // std of object features
    double cue_scale = 1.0;
    bool aligned_codes = true;
    Mode mode = Mode::VideoQA;
    std::uint64_t seed = 0;

    std::size_t signal_dim() const { return signal_end - signal_begin; }

    void validate() const {
        if (C < 2) throw ContractError("synthetic data needs C >= 2");
        if (T == 0 || N == 0 || M_q == 0 || answer_len == 0) throw ContractError("synthetic sizes must be positive");
        if (mode == Mode::ImageQA && T != 1) throw ContractError("image mode uses T = 1");
        if (vocab < C + 1) throw ContractError("vocabulary must exceed the candidate count");
        if (signal_begin >= signal_end || signal_end >= d_vc) {
            throw ContractError("signal range must be non-empty and leave the last f_vc slot for salience");
        }
        if (signal_dim() > d_o) throw ContractError("the object cue needs signal_dim <= d_o");
        if (!(spurious_strength >= 0.0 && spurious_strength <= 1.0)) {
            throw ContractError("spurious_strength must lie in [0, 1]");
        }
        if (n_train == 0 && n_eval == 0) throw ContractError("empty dataset");
    }

    /// Model dimensions that fit this data.
    ModelConfig fit(ModelConfig config) const {
        config.d_o = d_o;
        config.d_vc = d_vc;
        config.d_ap = d_ap;
        config.d_t = d_t;
        config.mode = mode;
        return config;
    }
};

struct Dataset {
    std::vector<QAInstance> train;
    std::vector<QAInstance> eval;
};

namespace detail {

struct Vocabulary {
    std::vector<std::vector<double>> concept_tokens; // [vocab][d_t]
    std::vector<std::vector<double>> concept_codes;  // [vocab][signal_dim]
    std::vector<std::vector<double>> filler_tokens;  // question / filler words
};

inline Vocabulary make_vocabulary(const SynthSpec& s) {
    std::mt19937_64 rng(mix_seed(s.seed, 0x766f636162ull));
    std::normal_distribution<double> gauss(0.0, 1.0);
    auto draw = [&](std::size_t n) {
        std::vector<double> v(n);
        for (double& x : v) x = gauss(rng);
        return v;
    };
    Vocabulary v;
    for (std::size_t k = 0; k < s.vocab; ++k) v.concept_tokens.push_back(draw(s.d_t));
    for (std::size_t k = 0; k < s.vocab; ++k) {
        if (s.aligned_codes) {
            v.concept_codes.emplace_back(v.concept_tokens[k].begin(), v.concept_tokens[k].begin() + std::min(s.signal_dim(), s.d_t));
            v.concept_codes.back().resize(s.signal_dim(), 0.0);
        } else {
            v.concept_codes.push_back(draw(s.signal_dim()));
        }
    }
    for (std::size_t k = 0; k < 2 * s.vocab; ++k) v.filler_tokens.push_back(draw(s.d_t));
    return v;
}

struct BoxLayout {
    std::vector<Box> by_role; // signal, context, distractors...
};

// Signal and context live in the left half and overlap; the first two
// distractors sit in disjoint quadrants of the right half.
inline BoxLayout sample_boxes(std::size_t n, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    auto lerp = [&](double lo, double hi) { return lo + (hi - lo) * u(rng); };
    BoxLayout layout;
    const double sx = lerp(5.0, 20.0), sy = lerp(10.0, 60.0), sw = lerp(15.0, 25.0), sh = lerp(15.0, 25.0);
    layout.by_role.push_back({sx, sy, sx + sw, sy + sh});
    if (n > 1) {
        const double dx = lerp(-5.0, 5.0), dy = lerp(-5.0, 5.0);
        layout.by_role.push_back({sx + dx, sy + dy, sx + dx + sw, sy + dy + sh});
    }
    for (std::size_t r = 2; r < n; ++r) {
        double x0, y0;
        if (r == 2) {
            x0 = lerp(55.0, 75.0), y0 = lerp(5.0, 25.0);
        } else if (r == 3) {
            x0 = lerp(55.0, 75.0), y0 = lerp(55.0, 75.0);
        } else {
            x0 = lerp(0.0, 80.0), y0 = lerp(0.0, 80.0);
        }
        layout.by_role.push_back({x0, y0, x0 + lerp(10.0, 20.0), y0 + lerp(10.0, 20.0)});
    }
    return layout;
}

inline QAInstance make_instance(const SynthSpec& s, const Vocabulary& vocab, std::uint64_t id, std::uint64_t stream) {
    std::mt19937_64 rng(stream);
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    auto pick = [&](std::size_t n) { return static_cast<std::size_t>(rng() % n); };

    QAInstance q;
    q.id = id;

    std::vector<std::size_t> concepts(s.vocab);
    std::iota(concepts.begin(), concepts.end(), 0);
    std::shuffle(concepts.begin(), concepts.end(), rng);
    std::vector<std::size_t> chosen(concepts.begin(), concepts.begin() + s.C);
    q.correct_index = pick(s.C);
    const std::size_t answer = chosen[q.correct_index];

    // Cue concept: a wrong candidate with probability spurious_strength,
    // otherwise a concept outside the candidate set.
    std::size_t cue;
    if (u(rng) < s.spurious_strength) {
        std::size_t w = pick(s.C - 1);
        if (w >= q.correct_index) ++w;
        cue = chosen[w];
    } else {
        cue = concepts[s.C + pick(s.vocab - s.C)];
    }

    const std::size_t sd = s.signal_dim();
    for (std::size_t t = 0; t < s.T; ++t) {
        std::vector<std::size_t> role_of(s.N);
        std::iota(role_of.begin(), role_of.end(), 0);
        std::shuffle(role_of.begin(), role_of.end(), rng);
        auto layout = sample_boxes(s.N, rng);

        std::vector<double> f_o(s.N * s.d_o), f_vc(s.N * s.d_vc);
        ObjectFrame frame;
        for (std::size_t obj = 0; obj < s.N; ++obj) {
            const std::size_t role = role_of[obj];
            double* o = f_o.data() + obj * s.d_o;
            double* vc = f_vc.data() + obj * s.d_vc;
            for (std::size_t i = 0; i < s.d_o; ++i) o[i] = s.object_noise * gauss(rng);
            for (std::size_t i = 0; i < s.d_vc; ++i) vc[i] = s.vc_noise * gauss(rng);
            if (role == 0) {
                for (std::size_t i = 0; i < sd; ++i) {
                    vc[s.signal_begin + i] = vocab.concept_codes[answer][i] + s.signal_noise * gauss(rng);
                }
                vc[s.d_vc - 1] += 1.0;
                q.signal_objects.push_back(obj);
            } else if (role == 1) {
                for (std::size_t i = 0; i < sd; ++i) o[i] += s.cue_scale * vocab.concept_codes[cue][i];
            }
            frame.boxes.push_back(layout.by_role[role]);
        }
        frame.f_o = Tensor({s.N, s.d_o}, std::move(f_o));
        frame.f_vc = Tensor({s.N, s.d_vc}, std::move(f_vc));
        q.frames.push_back(std::move(frame));
    }

    std::vector<double> appearance(s.T * s.d_ap);
    for (double& v : appearance) v = gauss(rng);
    q.appearance = Tensor({s.T, s.d_ap}, std::move(appearance));

    std::vector<double> question;
    for (std::size_t m = 0; m < s.M_q; ++m) {
        const auto& w = vocab.filler_tokens[pick(vocab.filler_tokens.size())];
        question.insert(question.end(), w.begin(), w.end());
    }
    q.question = Tensor({s.M_q, s.d_t}, std::move(question));

    for (std::size_t k = 0; k < s.C; ++k) {
        std::vector<double> tokens;
        for (std::size_t i = 0; i < s.d_t; ++i) tokens.push_back(vocab.concept_tokens[chosen[k]][i] + 0.1 * gauss(rng));
        for (std::size_t l = 1; l < s.answer_len; ++l) {
            const auto& w = vocab.filler_tokens[pick(vocab.filler_tokens.size())];
            tokens.insert(tokens.end(), w.begin(), w.end());
        }
        q.candidates.push_back(Tensor({s.answer_len, s.d_t}, std::move(tokens)));
    }
    return q;
}

} // namespace detail

/// Deterministic in spec.seed. Instance ids are 0..n_train-1 for train and
/// continue for eval.
inline Dataset generate_dataset(const SynthSpec& spec) {
    spec.validate();
    const auto vocab = detail::make_vocabulary(spec);
    Dataset data;
    data.train.reserve(spec.n_train);
    data.eval.reserve(spec.n_eval);
    for (std::size_t i = 0; i < spec.n_train; ++i) {
        data.train.push_back(detail::make_instance(spec, vocab, i, mix_seed(spec.seed, 1, i)));
    }
    for (std::size_t i = 0; i < spec.n_eval; ++i) {
        data.eval.push_back(detail::make_instance(spec, vocab, spec.n_train + i, mix_seed(spec.seed, 2, i)));
    }
    return data;
}

} // namespace vchgcl
