#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "vchgcl/harness.hpp"
#include "vchgcl/io.hpp"

using namespace vchgcl;
namespace fs = std::filesystem;

namespace {

std::string serialize(const std::vector<QAInstance>& split) {
    std::vector<NamedTensor> records;
    for (std::size_t i = 0; i < split.size(); ++i) detail::append_instance(records, i, split[i]);
    std::ostringstream out;
    write_snapshot(out, records);
    return out.str();
}

SynthSpec tiny_spec(std::uint64_t seed = 0) {
    SynthSpec s;
    s.n_train = 40;
    s.n_eval = 30;
    s.T = 2;
    s.N = 3;
    s.M_q = 3;
    s.C = 3;
    s.vocab = 8;
    s.signal_end = 4;
    s.d_o = 8;
    s.d_vc = 6;
    s.d_ap = 4;
    s.d_t = 6;
    s.seed = seed;
    return s;
}

ModelConfig tiny_config(Ablation a = Ablation::GRNContrastive, std::uint64_t seed = 1) {
    ModelConfig c;
    c.d = 6;
    c.d_ev = 4;
    c.d_h = 6;
    c.d_out = 8;
    c.p = 4;
    c.seed = seed;
    c.ablation = a;
    return c;
}

fs::path scratch_dir(const std::string& name) {
    auto dir = fs::temp_directory_path() / ("vchgcl_harness_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

// Per-frame mean of the object features, frames concatenated. Object order
// inside a frame is random, so the mean is the order-free summary.
oracle::Vec object_summary(const QAInstance& q) {
    oracle::Vec out;
    for (const auto& f : q.frames) {
        oracle::Vec m(f.f_o.dim(1), 0.0);
        for (std::size_t i = 0; i < f.objects(); ++i)
            for (std::size_t k = 0; k < m.size(); ++k) m[k] += f.f_o.at(i, k) / static_cast<double>(f.objects());
        out.insert(out.end(), m.begin(), m.end());
    }
    return out;
}

void expect_finite(const EvalMetrics& m) {
    for (double v : {m.accuracy, m.cos_anchor_positive, m.cos_anchor_negative, m.signal_attention})
        EXPECT_TRUE(std::isfinite(v));
    EXPECT_GE(m.accuracy, 0.0);
    EXPECT_LE(m.accuracy, 1.0);
    EXPECT_GE(m.cos_anchor_positive, -1.0 - 1e-12);
    EXPECT_LE(m.cos_anchor_positive, 1.0 + 1e-12);
    EXPECT_GE(m.cos_anchor_negative, -1.0 - 1e-12);
    EXPECT_LE(m.cos_anchor_negative, 1.0 + 1e-12);
}

} // namespace

TEST(Synth, SameSeedGivesByteIdenticalData) {
    auto a = generate_dataset(tiny_spec(4)), b = generate_dataset(tiny_spec(4)), c = generate_dataset(tiny_spec(5));
    EXPECT_EQ(serialize(a.train), serialize(b.train));
    EXPECT_EQ(serialize(a.eval), serialize(b.eval));
    EXPECT_NE(serialize(a.train), serialize(c.train));
}

TEST(Synth, SpecValidation) {
    auto s = tiny_spec();
    s.C = 1;
    EXPECT_THROW(generate_dataset(s), ContractError);
    s = tiny_spec();
    s.signal_end = s.d_vc;
    EXPECT_THROW(generate_dataset(s), ContractError);
    s = tiny_spec();
    s.spurious_strength = 1.5;
    EXPECT_THROW(generate_dataset(s), ContractError);
    s = tiny_spec();
    s.mode = Mode::ImageQA;
    EXPECT_THROW(generate_dataset(s), ContractError);
}

TEST(Synth, LabelHistogramIsUniform) {
    SynthSpec s;
    s.n_train = 10000;
    s.n_eval = 0;
    auto data = generate_dataset(s);
    std::vector<double> hist(s.C, 0.0);
    for (const auto& q : data.train) hist[q.correct_index] += 1.0 / 10000.0;
    for (double h : hist) {
        EXPECT_GE(h, 0.22);
        EXPECT_LE(h, 0.28);
    }
}

TEST(Synth, ObjectFeaturesAloneAreAtChanceWithoutSpuriousCue) {
    SynthSpec s;
    s.n_train = 1000;
    s.n_eval = 1000;
    s.spurious_strength = 0.0;
    auto data = generate_dataset(s);
    oracle::Mat xs;
    std::vector<std::size_t> ys;
    for (const auto& q : data.train) xs.push_back(object_summary(q)), ys.push_back(q.correct_index);
    oracle::NearestCentroid clf;
    clf.fit(xs, ys, s.C);
    double hits = 0.0;
    for (const auto& q : data.eval) hits += clf.predict(object_summary(q)) == q.correct_index;
    EXPECT_NEAR(hits / 1000.0, 1.0 / static_cast<double>(s.C), 0.05);
}

TEST(Synth, CommonsenseFeaturesRecoverTheAnswer) {
    // Matches the flagged object's code slots against each candidate's first
    // token; a lower bound on the Bayes accuracy from F_VC.
    SynthSpec s;
    s.n_train = 0;
    s.n_eval = 1000;
    auto data = generate_dataset(s);
    ASSERT_TRUE(s.aligned_codes);
    double hits = 0.0;
    for (const auto& q : data.eval) {
        oracle::Vec code(s.signal_dim(), 0.0);
        for (const auto& f : q.frames) {
            std::size_t flagged = 0;
            for (std::size_t i = 1; i < f.objects(); ++i)
                if (f.f_vc.at(i, s.d_vc - 1) > f.f_vc.at(flagged, s.d_vc - 1)) flagged = i;
            for (std::size_t k = 0; k < code.size(); ++k) code[k] += f.f_vc.at(flagged, s.signal_begin + k);
        }
        std::size_t best = 0;
        double best_d = INFINITY;
        for (std::size_t c = 0; c < q.candidates.size(); ++c) {
            double d = 0.0;
            for (std::size_t k = 0; k < code.size(); ++k) {
                const double diff = code[k] / static_cast<double>(q.frames.size()) - q.candidates[c].at(0, k);
                d += diff * diff;
            }
            if (d < best_d) best_d = d, best = c;
        }
        hits += best == q.correct_index;
    }
    EXPECT_GE(hits / 1000.0, 0.99);
}

TEST(Synth, BoxesOverlapForSignalAndContextOnly) {
    auto data = generate_dataset(tiny_spec(2));
    for (const auto& q : data.train) {
        ASSERT_EQ(q.signal_objects.size(), q.frames.size());
        for (std::size_t t = 0; t < q.frames.size(); ++t) {
            const auto& boxes = q.frames[t].boxes;
            const auto& signal = boxes[q.signal_objects[t]];
            std::size_t overlapping = 0, disjoint_pairs = 0;
            for (std::size_t i = 0; i < boxes.size(); ++i) {
                if (i != q.signal_objects[t] && iou(signal, boxes[i]) > 0.0) ++overlapping;
                for (std::size_t j = i + 1; j < boxes.size(); ++j) disjoint_pairs += iou(boxes[i], boxes[j]) == 0.0;
            }
            EXPECT_GE(overlapping, 1u);
            EXPECT_GE(disjoint_pairs, 1u);
        }
    }
}

TEST(RunOptions, LinearDecaySchedule) {
    RunOptions o;
    o.epochs = 5;
    o.lr = 0.1;
    o.final_lr_fraction = 0.2;
    EXPECT_DOUBLE_EQ(o.learning_rate(1), 0.1);
    EXPECT_DOUBLE_EQ(o.learning_rate(3), 0.06);
    EXPECT_DOUBLE_EQ(o.learning_rate(5), 0.02);
    o.batch_size = 0;
    EXPECT_THROW(o.validate(), ContractError);
}

TEST(RunTraining, ZeroEpochsIsTheUntrainedEvaluation) {
    SynthSpec s;
    s.n_train = 10;
    s.n_eval = 500;
    RunOptions o;
    o.epochs = 0;
    ModelConfig c;
    c.seed = 3;
    auto report = run_training(c, s, o);
    ASSERT_EQ(report.epochs.size(), 1u);
    EXPECT_EQ(report.epochs[0].epoch, 0u);
    EXPECT_NEAR(report.final().eval.accuracy, 1.0 / static_cast<double>(s.C), 0.1);
}

TEST(RunTraining, IdenticalSeedsGiveIdenticalReports) {
    RunOptions o;
    o.epochs = 2;
    auto a = run_training(tiny_config(), tiny_spec(), o), b = run_training(tiny_config(), tiny_spec(), o);
    EXPECT_EQ(report_csv(a), report_csv(b));
    ASSERT_EQ(a.epochs.size(), 3u);
    for (const auto& e : a.epochs) {
        expect_finite(e.eval);
        EXPECT_TRUE(std::isfinite(e.train_loss));
    }
}

TEST(RunTraining, CsvLayout) {
    RunOptions o;
    o.epochs = 3;
    o.evaluate_every_epoch = false;
    auto csv = report_csv(run_training(tiny_config(), tiny_spec(), o));
    std::istringstream in(csv);
    std::string line;
    std::getline(in, line);
    EXPECT_EQ(line, "epoch,train_loss,eval_accuracy,cos_anchor_positive,cos_anchor_negative,signal_attention");
    std::vector<std::string> rows;
    while (std::getline(in, line)) rows.push_back(line);
    ASSERT_EQ(rows.size(), 2u); // untrained and final epoch
    EXPECT_EQ(rows[0].substr(0, 2), "0,");
    EXPECT_EQ(rows[1].substr(0, 2), "3,");
}

TEST(RunTraining, NumericFailureNamesSeedAndEpoch) {
    auto spec = tiny_spec();
    auto data = generate_dataset(spec);
    Model model(spec.fit(tiny_config(Ablation::VCOOnly, 12)));
    Tensor w = model.parameters().get("classifier.weight");
    w.mutable_data()[0] = INFINITY;
    RunOptions o;
    o.epochs = 1;
    try {
        train_model(model, data, o);
        FAIL() << "expected NumericError";
    } catch (const NumericError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("seed 12"), std::string::npos) << msg;
        EXPECT_NE(msg.find("epoch 1"), std::string::npos) << msg;
    }
}

TEST(Ablation, FourRowsAndBaselineIsZeroedCommonsenseWithoutContrast) {
    auto spec = tiny_spec(7);
    RunOptions o;
    o.epochs = 2;
    auto table = run_ablation(spec, tiny_config(), o);
    ASSERT_EQ(table.rows.size(), 4u);
    for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(table.rows[i].ablation, kAblations[i]);

    auto data = generate_dataset(spec);
    for (auto* split : {&data.train, &data.eval})
        for (auto& q : *split)
            for (auto& f : q.frames) f.f_vc = Tensor::zeros(f.f_vc.shape());
    auto zeroed = spec.fit(tiny_config(Ablation::VCOOnly));
    zeroed.lambda = 0.0;
    auto reference = run_training(zeroed, data, o);
    const auto& baseline = table.rows[0].report;
    ASSERT_EQ(baseline.epochs.size(), reference.epochs.size());
    for (std::size_t e = 0; e < reference.epochs.size(); ++e) {
        EXPECT_NEAR(baseline.epochs[e].train_loss, reference.epochs[e].train_loss, 1e-9);
        EXPECT_NEAR(baseline.epochs[e].eval.accuracy, reference.epochs[e].eval.accuracy, 1e-9);
    }
    EXPECT_EQ(baseline.final().eval.cos_anchor_positive, 0.0);

    auto csv = ablation_csv(table);
    EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 5);
    EXPECT_EQ(csv.substr(0, csv.find('\n')),
              "ablation,epochs,accuracy,cos_anchor_positive,cos_anchor_negative,signal_attention,final_train_loss");
}

TEST(Ablation, NamesRoundTrip) {
    for (auto a : kAblations) EXPECT_EQ(parse_ablation(ablation_name(a)), a);
    EXPECT_THROW(parse_ablation("Everything"), ContractError);
}

TEST(Attention, SignalObjectGainsWeightWithTraining) {
    SynthSpec s;
    s.n_train = 400;
    s.n_eval = 100;
    RunOptions o;
    o.epochs = 6;
    o.lr = 0.003;
    o.evaluate_every_epoch = false;
    ModelConfig c;
    c.seed = 2;
    auto report = run_training(c, s, o);
    EXPECT_GT(report.final().eval.signal_attention, 1.0 / static_cast<double>(s.N));
    EXPECT_GT(report.final().eval.cos_anchor_positive, report.final().eval.cos_anchor_negative);
}

TEST(Attention, DumpedWeightsAreDistributions) {
    auto spec = tiny_spec();
    auto data = generate_dataset(spec);
    Model model(spec.fit(tiny_config()));
    auto dir = scratch_dir("dump");
    dump_attention(model, data.eval[0], dir / "attention.json");
    auto j = read_json_file(dir / "attention.json");
    ASSERT_EQ(j["object_attention"].size(), spec.T);
    for (const auto& frame : j["object_attention"]) {
        double total = 0.0;
        for (const auto& o : frame) total += o["weight"].get<double>();
        EXPECT_NEAR(total, 1.0, 1e-6);
        EXPECT_EQ(frame[0]["box"].size(), 4u);
    }
    for (const auto& w : j["node_attention"]) {
        double total = 0.0;
        for (double v : w) total += v;
        EXPECT_NEAR(total, 1.0, 1e-6);
    }
    EXPECT_EQ(j["gated_edges"].size(), spec.C);
    EXPECT_EQ(j["ablation"], "GRNContrastive");
}

TEST(Attention, SingleObjectHasWeightOne) {
    auto spec = tiny_spec();
    spec.N = 1;
    auto data = generate_dataset(spec);
    Model model(spec.fit(tiny_config()));
    auto j = attention_record(model, data.eval[0]);
    for (const auto& frame : j["object_attention"]) EXPECT_EQ(frame[0]["weight"].get<double>(), 1.0);
}

TEST(Attention, UnwritablePathIsFilesystemError) {
    auto spec = tiny_spec();
    auto data = generate_dataset(spec);
    Model model(spec.fit(tiny_config()));
    // A regular file as a parent directory fails even with root privileges.
    auto blocker = scratch_dir("unwritable") / "file";
    write_text_file(blocker, "x");
    EXPECT_THROW(dump_attention(model, data.eval[0], blocker / "attention.json"), fs::filesystem_error);
}

TEST(Io, ConfigJsonRoundTrip) {
    auto c = tiny_config(Ablation::MLPContrastive, 99);
    c.mode = Mode::ImageQA;
    c.fixed_sigma = 0.25;
    c.tau = 0.3;
    c.share_branch_weights = true;
    c.attention_activation = Activation::Sigmoid;
    auto back = model_config_from_json(to_json(c));
    EXPECT_EQ(to_json(back), to_json(c));
    EXPECT_EQ(back.ablation, Ablation::MLPContrastive);
    EXPECT_EQ(*back.fixed_sigma, 0.25);
    EXPECT_EQ(back.seed, 99u);
}

TEST(Io, ConfigJsonRejectsBadInput) {
    EXPECT_THROW(model_config_from_json(Json{{"tua", 0.5}}), ContractError);
    EXPECT_THROW(model_config_from_json(Json{{"tau", -1.0}}), ContractError);
    EXPECT_THROW(model_config_from_json(Json{{"mode", "audio"}}), ContractError);
    EXPECT_EQ(model_config_from_json(Json::object()).lambda, 1.7);
}

TEST(Io, SpecJsonRoundTrip) {
    auto s = tiny_spec(31);
    s.spurious_strength = 0.25;
    auto back = synth_spec_from_json(to_json(s));
    EXPECT_EQ(to_json(back), to_json(s));
    EXPECT_THROW(synth_spec_from_json(Json{{"n_trian", 3}}), ContractError);
}

TEST(Io, DatasetRoundTripIsExact) {
    auto spec = tiny_spec(8);
    auto data = generate_dataset(spec);
    auto dir = scratch_dir("dataset");
    save_dataset(dir, spec, data);
    auto loaded = load_dataset(dir);
    EXPECT_EQ(serialize(loaded.data.train), serialize(data.train));
    EXPECT_EQ(serialize(loaded.data.eval), serialize(data.eval));
    EXPECT_EQ(to_json(loaded.spec), to_json(spec));
    for (std::size_t i = 0; i < data.train.size(); ++i) {
        EXPECT_EQ(loaded.data.train[i].id, data.train[i].id);
        EXPECT_EQ(loaded.data.train[i].correct_index, data.train[i].correct_index);
        EXPECT_EQ(loaded.data.train[i].signal_objects, data.train[i].signal_objects);
    }
}

TEST(Io, CheckpointRoundTripReproducesScores) {
    auto spec = tiny_spec();
    auto data = generate_dataset(spec);
    Model model(spec.fit(tiny_config()));
    RunOptions o;
    o.epochs = 1;
    train_model(model, data, o);
    auto dir = scratch_dir("checkpoint");
    save_checkpoint(dir / "model.vchg", model, spec);
    auto loaded = load_checkpoint(dir / "model.vchg");
    for (const auto& q : data.eval) {
        NoGradGuard guard;
        EXPECT_EQ(loaded.model.forward(q, 0).scores.to_vector(), model.forward(q, 0).scores.to_vector());
    }
    EXPECT_EQ(to_json(loaded.spec), to_json(spec));
}

TEST(Io, CheckpointShapeMismatch) {
    auto spec = tiny_spec();
    Model model(spec.fit(tiny_config()));
    auto dir = scratch_dir("mismatch");
    save_parameters(dir / "p.vchg", model.parameters());
    auto other = tiny_config();
    other.d_out = 10;
    Model wider(spec.fit(other));
    EXPECT_THROW(load_parameters(dir / "p.vchg", wider.parameters()), ShapeError);
}
