#pragma once

// JSON configuration, dataset directories, checkpoints and attention dumps.
//
// Dataset directory:
//   dataset.json   {"spec": {...}, "train": n, "eval": n}
//   train.vchg     tensor snapshot, see below
//   eval.vchg
// Each instance i stores tensors under "i/<field>": "i/meta" = [id, correct,
// T, C], "i/appearance", "i/question", "i/candidate/k", "i/frame/t/f_o",
// "i/frame/t/f_vc", "i/frame/t/boxes" ([N x 4], x_min y_min x_max y_max) and
// "i/signal" (signal object per frame, may be empty).
//
// Checkpoint: a parameter snapshot plus "<file>.json" holding the model
// config and the synthetic spec it was trained on.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vchgcl/harness.hpp"
#include "vchgcl/snapshot.hpp"

namespace vchgcl {

using Json = nlohmann::json;

namespace detail {

template <class T>
void read_field(const Json& j, const char* key, T& out) {
    if (!j.contains(key)) return;
    try {
        out = j.at(key).get<T>();
    } catch (const Json::exception& e) {
        throw ContractError(std::string("bad value for '") + key + "': " + e.what());
    }
}

inline void reject_unknown(const Json& j, std::initializer_list<const char*> known, const char* what) {
    if (!j.is_object()) throw ContractError(std::string(what) + " must be a JSON object");
    for (const auto& [key, _] : j.items()) {
        bool ok = false;
        for (const char* k : known) ok = ok || key == k;
        if (!ok) throw ContractError(std::string("unknown ") + what + " field '" + key + "'");
    }
}

inline std::string mode_name(Mode m) { return m == Mode::VideoQA ? "video" : "image"; }

inline Mode parse_mode(const std::string& s) {
    if (s == "video") return Mode::VideoQA;
    if (s == "image") return Mode::ImageQA;
    throw ContractError("mode must be 'video' or 'image', got '" + s + "'");
}

inline std::string activation_name(Activation a) {
    switch (a) {
    case Activation::Tanh: return "tanh";
    case Activation::Sigmoid: return "sigmoid";
    case Activation::Identity: return "identity";
    }
    throw ContractError("unknown activation");
}

inline Activation parse_activation(const std::string& s) {
    if (s == "tanh") return Activation::Tanh;
    if (s == "sigmoid") return Activation::Sigmoid;
    if (s == "identity") return Activation::Identity;
    throw ContractError("unknown activation '" + s + "'");
}

} // namespace detail

inline Json to_json(const ModelConfig& c) {
    Json j = {{"d_o", c.d_o},     {"d_vc", c.d_vc},   {"d", c.d},         {"d_ap", c.d_ap},
              {"d_ev", c.d_ev},   {"d_t", c.d_t},     {"d_h", c.d_h},     {"d_out", c.d_out},
              {"p", c.p},         {"tau", c.tau},     {"lambda", c.lambda}, {"mode", detail::mode_name(c.mode)},
              {"seed", c.seed},   {"ablation", ablation_name(c.ablation)},
              {"share_branch_weights", c.share_branch_weights},
              {"attention_activation", detail::activation_name(c.attention_activation)},
              {"ln_eps", c.ln_eps}};
    j["sigma"] = c.fixed_sigma ? Json(*c.fixed_sigma) : Json("anchor_std");
    return j;
}

inline ModelConfig model_config_from_json(const Json& j) {
    detail::reject_unknown(j,
                           {"d_o", "d_vc", "d", "d_ap", "d_ev", "d_t", "d_h", "d_out", "p", "tau", "lambda", "mode",
                            "seed", "ablation", "share_branch_weights", "attention_activation", "ln_eps", "sigma"},
                           "config");
    ModelConfig c;
    using detail::read_field;
    read_field(j, "d_o", c.d_o);
    read_field(j, "d_vc", c.d_vc);
    read_field(j, "d", c.d);
    read_field(j, "d_ap", c.d_ap);
    read_field(j, "d_ev", c.d_ev);
    read_field(j, "d_t", c.d_t);
    read_field(j, "d_h", c.d_h);
    read_field(j, "d_out", c.d_out);
    read_field(j, "p", c.p);
    read_field(j, "tau", c.tau);
    read_field(j, "lambda", c.lambda);
    read_field(j, "seed", c.seed);
    read_field(j, "share_branch_weights", c.share_branch_weights);
    read_field(j, "ln_eps", c.ln_eps);
    std::string s;
    if (j.contains("mode")) {
        read_field(j, "mode", s);
        c.mode = detail::parse_mode(s);
    }
    if (j.contains("ablation")) {
        read_field(j, "ablation", s);
        c.ablation = parse_ablation(s);
    }
    if (j.contains("attention_activation")) {
        read_field(j, "attention_activation", s);
        c.attention_activation = detail::parse_activation(s);
    }
    if (j.contains("sigma")) {
        const auto& v = j.at("sigma");
        if (v.is_number()) {
            c.fixed_sigma = v.get<double>();
        } else if (!(v.is_string() && v.get<std::string>() == "anchor_std")) {
            throw ContractError("sigma must be a number or \"anchor_std\"");
        }
    }
    c.validate();
    return c;
}

inline Json to_json(const SynthSpec& s) {
    return {{"n_train", s.n_train},
            {"n_eval", s.n_eval},
            {"T", s.T},
            {"N", s.N},
            {"M_q", s.M_q},
            {"C", s.C},
            {"answer_len", s.answer_len},
            {"vocab", s.vocab},
            {"spurious_strength", s.spurious_strength},
            {"signal_begin", s.signal_begin},
            {"signal_end", s.signal_end},
            {"d_o", s.d_o},
            {"d_vc", s.d_vc},
            {"d_ap", s.d_ap},
            {"d_t", s.d_t},
            {"signal_noise", s.signal_noise},
            {"vc_noise", s.vc_noise},
            {"object_noise", s.object_noise},
            {"cue_scale", s.cue_scale},
            {"aligned_codes", s.aligned_codes},
            {"mode", detail::mode_name(s.mode)},
            {"seed", s.seed}};
}

inline SynthSpec synth_spec_from_json(const Json& j) {
    detail::reject_unknown(j,
                           {"n_train", "n_eval", "T", "N", "M_q", "C", "answer_len", "vocab", "spurious_strength",
                            "signal_begin", "signal_end", "d_o", "d_vc", "d_ap", "d_t", "signal_noise", "vc_noise",
                            "object_noise", "cue_scale", "aligned_codes", "mode", "seed"},
                           "spec");
    SynthSpec s;
    using detail::read_field;
    read_field(j, "n_train", s.n_train);
    read_field(j, "n_eval", s.n_eval);
    read_field(j, "T", s.T);
    read_field(j, "N", s.N);
    read_field(j, "M_q", s.M_q);
    read_field(j, "C", s.C);
    read_field(j, "answer_len", s.answer_len);
    read_field(j, "vocab", s.vocab);
    read_field(j, "spurious_strength", s.spurious_strength);
    read_field(j, "signal_begin", s.signal_begin);
    read_field(j, "signal_end", s.signal_end);
    read_field(j, "d_o", s.d_o);
    read_field(j, "d_vc", s.d_vc);
    read_field(j, "d_ap", s.d_ap);
    read_field(j, "d_t", s.d_t);
    read_field(j, "signal_noise", s.signal_noise);
    read_field(j, "vc_noise", s.vc_noise);
    read_field(j, "object_noise", s.object_noise);
    read_field(j, "cue_scale", s.cue_scale);
    read_field(j, "aligned_codes", s.aligned_codes);
    read_field(j, "seed", s.seed);
    if (j.contains("mode")) {
        std::string m;
        read_field(j, "mode", m);
        s.mode = detail::parse_mode(m);
        if (s.mode == Mode::ImageQA && !j.contains("T")) s.T = 1;
    }
    s.validate();
    return s;
}

inline Json read_json_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::filesystem::filesystem_error("cannot open", path, std::make_error_code(std::errc::io_error));
    try {
        return Json::parse(in);
    } catch (const Json::parse_error& e) {
        throw ContractError(path.string() + ": " + e.what());
    }
}

inline void write_text_file(const std::filesystem::path& path, const std::string& text) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::filesystem::filesystem_error("cannot write", path, std::make_error_code(std::errc::io_error));
    out << text;
    if (!out) throw std::filesystem::filesystem_error("write failed", path, std::make_error_code(std::errc::io_error));
}

// ---------------------------------------------------------------- datasets

namespace detail {

inline void append_instance(std::vector<NamedTensor>& out, std::size_t index, const QAInstance& q) {
    const std::string p = std::to_string(index) + "/";
    out.push_back({p + "meta", Tensor::vector({static_cast<double>(q.id), static_cast<double>(q.correct_index),
                                               static_cast<double>(q.frames.size()),
                                               static_cast<double>(q.candidates.size())})});
    out.push_back({p + "appearance", q.appearance.defined() ? q.appearance : Tensor::zeros({0, 0})});
    out.push_back({p + "question", q.question});
    for (std::size_t k = 0; k < q.candidates.size(); ++k) out.push_back({p + "candidate/" + std::to_string(k), q.candidates[k]});
    for (std::size_t t = 0; t < q.frames.size(); ++t) {
        const auto& f = q.frames[t];
        const std::string fp = p + "frame/" + std::to_string(t) + "/";
        out.push_back({fp + "f_o", f.f_o});
        out.push_back({fp + "f_vc", f.f_vc});
        std::vector<double> boxes;
        for (const auto& b : f.boxes) boxes.insert(boxes.end(), {b.x_min, b.y_min, b.x_max, b.y_max});
        out.push_back({fp + "boxes", Tensor({f.boxes.size(), 4}, std::move(boxes))});
    }
    std::vector<double> signal(q.signal_objects.begin(), q.signal_objects.end());
    const std::size_t n_signal = signal.size();
    out.push_back({p + "signal", Tensor({n_signal}, std::move(signal))});
}

inline std::vector<QAInstance> instances_from_snapshot(const std::vector<NamedTensor>& tensors, std::size_t count) {
    std::map<std::string, Tensor> by_name;
    for (const auto& t : tensors) by_name[t.name] = t.tensor;
    auto get = [&](const std::string& name) {
        auto it = by_name.find(name);
        if (it == by_name.end()) throw ContractError("dataset is missing tensor '" + name + "'");
        return it->second;
    };
    auto as_index = [](double v) { return static_cast<std::size_t>(v); };
    std::vector<QAInstance> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        const std::string p = std::to_string(i) + "/";
        auto meta = get(p + "meta").to_vector();
        if (meta.size() != 4) throw ContractError("dataset instance " + std::to_string(i) + " has bad metadata");
        QAInstance q;
        q.id = static_cast<std::uint64_t>(meta[0]);
        q.correct_index = as_index(meta[1]);
        auto appearance = get(p + "appearance");
        if (appearance.size() > 0) q.appearance = appearance;
        q.question = get(p + "question");
        for (std::size_t k = 0; k < as_index(meta[3]); ++k) q.candidates.push_back(get(p + "candidate/" + std::to_string(k)));
        for (std::size_t t = 0; t < as_index(meta[2]); ++t) {
            const std::string fp = p + "frame/" + std::to_string(t) + "/";
            ObjectFrame f;
            f.f_o = get(fp + "f_o");
            f.f_vc = get(fp + "f_vc");
            auto boxes = get(fp + "boxes");
            for (std::size_t b = 0; b < boxes.dim(0); ++b) {
                f.boxes.push_back({boxes.at(b, 0), boxes.at(b, 1), boxes.at(b, 2), boxes.at(b, 3)});
            }
            q.frames.push_back(std::move(f));
        }
        for (double v : get(p + "signal").to_vector()) q.signal_objects.push_back(as_index(v));
        out.push_back(std::move(q));
    }
    return out;
}

inline void write_split(const std::filesystem::path& path, const std::vector<QAInstance>& split) {
    std::vector<NamedTensor> tensors;
    for (std::size_t i = 0; i < split.size(); ++i) append_instance(tensors, i, split[i]);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::filesystem::filesystem_error("cannot write", path, std::make_error_code(std::errc::io_error));
    write_snapshot(out, tensors);
}

inline std::vector<QAInstance> read_split(const std::filesystem::path& path, std::size_t count) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::filesystem::filesystem_error("cannot open", path, std::make_error_code(std::errc::io_error));
    return instances_from_snapshot(read_snapshot(in), count);
}

} // namespace detail

inline void save_dataset(const std::filesystem::path& dir, const SynthSpec& spec, const Dataset& data) {
    std::filesystem::create_directories(dir);
    Json meta = {{"spec", to_json(spec)}, {"train", data.train.size()}, {"eval", data.eval.size()}};
    write_text_file(dir / "dataset.json", meta.dump(2) + "\n");
    detail::write_split(dir / "train.vchg", data.train);
    detail::write_split(dir / "eval.vchg", data.eval);
}

struct LoadedDataset {
    SynthSpec spec;
    Dataset data;
};

inline LoadedDataset load_dataset(const std::filesystem::path& dir) {
    auto meta = read_json_file(dir / "dataset.json");
    LoadedDataset out;
    out.spec = synth_spec_from_json(meta.at("spec"));
    out.data.train = detail::read_split(dir / "train.vchg", meta.at("train").get<std::size_t>());
    out.data.eval = detail::read_split(dir / "eval.vchg", meta.at("eval").get<std::size_t>());
    return out;
}

// ------------------------------------------------------------- checkpoints

inline std::filesystem::path checkpoint_sidecar(const std::filesystem::path& checkpoint) {
    auto p = checkpoint;
    p += ".json";
    return p;
}

inline void save_checkpoint(const std::filesystem::path& path, const Model& model, const SynthSpec& spec) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    save_parameters(path, model.parameters());
    Json side = {{"config", to_json(model.config())}, {"spec", to_json(spec)}};
    write_text_file(checkpoint_sidecar(path), side.dump(2) + "\n");
}

struct LoadedCheckpoint {
    Model model;
    SynthSpec spec;
};

inline LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
    auto side = read_json_file(checkpoint_sidecar(path));
    LoadedCheckpoint out{Model(model_config_from_json(side.at("config"))), synth_spec_from_json(side.at("spec"))};
    load_parameters(path, out.model.parameters());
    return out;
}

// --------------------------------------------------------- attention dumps

/// JSON record of one forward pass:
///   object_attention  per frame, {"object", "weight", "box"} per object
///   node_attention    per candidate, weights over graph nodes (visual first)
///   node_kinds        "visual" / "text" per node
///   gated_edges       per candidate, row-major [n x n]; empty without the graph
///   gate_mask         same layout, 0/1
///   scores, prediction, correct_index, signal_objects
inline Json attention_record(const Model& model, const QAInstance& q) {
    NoGradGuard no_grad;
    auto fwd = model.forward(q, mix_seed(model.config().seed, kEvalNoiseSalt, q.id));
    const auto& d = fwd.diagnostics;
    Json j;
    j["instance_id"] = q.id;
    j["ablation"] = ablation_name(model.config().ablation);
    j["scores"] = fwd.scores.to_vector();
    j["prediction"] = argmax_lowest(fwd.scores.data());
    j["correct_index"] = q.correct_index;
    j["signal_objects"] = q.signal_objects;
    Json frames = Json::array();
    for (std::size_t t = 0; t < d.object_attention.size(); ++t) {
        Json objects = Json::array();
        for (std::size_t o = 0; o < d.object_attention[t].size(); ++o) {
            const auto& b = q.frames[t].boxes.at(o);
            objects.push_back({{"object", o},
                               {"weight", d.object_attention[t][o]},
                               {"box", {b.x_min, b.y_min, b.x_max, b.y_max}}});
        }
        frames.push_back(objects);
    }
    j["object_attention"] = frames;
    j["node_attention"] = d.node_attention;
    Json kinds = Json::array();
    for (auto k : d.node_kinds) kinds.push_back(k == NodeKind::Visual ? "visual" : "text");
    j["node_kinds"] = kinds;
    j["gated_edges"] = d.gated_edges;
    j["gate_mask"] = d.gate_mask;
    return j;
}

inline void dump_attention(const Model& model, const QAInstance& q, const std::filesystem::path& path) {
    write_text_file(path, attention_record(model, q).dump(2) + "\n");
}

} // namespace vchgcl
