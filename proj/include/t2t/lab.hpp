#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "t2t/params.hpp"
#include "t2t/rng.hpp"
#include "t2t/seq2seq.hpp"
#include "t2t/tensor.hpp"

namespace t2t {

// Probability below which a sequence counts as zero-mass for the infinity
// sentinel in exact divergences.
inline constexpr double kZeroMassEps = 1e-12;

// Explicit autoregressive distribution over sequences of fixed length T from
// a vocabulary of size V. Small enough to enumerate exactly (V^T <= 100000).
struct TabularAR {
    enum class Tying {
        Full,         // step t conditions on the whole prefix
        Markov1,      // step t conditions on the previous token only
        Independent,  // no prefix dependence
    };

    int vocab = 2;
    int length = 1;
    Tying tying = Tying::Full;
    int rank = 0;        // 0 = free logit tables; > 0 = the tables were built
                         // as a rank-limited product (capacity knob)
    int context_id = 0;  // which conditional context this table models

    // Materialized per-step logit tables, step t of shape [rows(t) x V].
    std::vector<Tensor> step_logits;

    static TabularAR uniform(int V, int T, Tying tying = Tying::Full);
    // Full-capacity conditionals of an explicit joint (size V^T, sums to 1).
    static TabularAR from_joint(int V, int T, std::span<const double> joint);

    void validate() const;
    std::size_t rows(int t) const;
    std::size_t joint_size() const;  // V^T
    std::size_t prefix_row(int t, std::span<const int> prefix) const;
    std::vector<double> conditional(int t, std::span<const int> prefix) const;
    double log_prob(std::span<const int> seq) const;
    // Exact joint, index order given by seq_to_index. Sums to 1 (+-1e-9).
    std::vector<double> enumerate_joint() const;
};

std::vector<int> index_to_seq(std::size_t index, int V, int T);
std::size_t seq_to_index(std::span<const int> seq, int V);

enum class DivergenceKind { ForwardKl, InverseKl, Jsd };
const char* divergence_name(DivergenceKind k);

// Exact summation over all V^T sequences. Forward KL returns +inf when P has
// mass > eps where G has none (and symmetrically for inverse); JSD is always
// finite and <= ln 2.
double exact_divergence(DivergenceKind kind, const TabularAR& p, const TabularAR& g);
double exact_divergence_joint(DivergenceKind kind, std::span<const double> p,
                              std::span<const double> g);

// Fixed-length tabular model behind the sequence-model interface; the source
// sequence is ignored (single conditioning context).
class TabularShell : public ConditionalSequenceModel {
public:
    explicit TabularShell(const TabularAR& m) : model_(&m) {}
    std::size_t target_vocab() const override { return static_cast<std::size_t>(model_->vocab); }
    int eos_id() const override { return -1; }
    std::unique_ptr<StepSession> begin(std::span<const int> src) const override;

private:
    const TabularAR* model_;
};

// ---------------------------------------------------------------------------
// targets and fits
// ---------------------------------------------------------------------------

// Bimodal target with two planted antipodal modes of mode_mass each and the
// remainder spread uniformly over every other sequence.
struct PlantedTarget {
    TabularAR model;
    std::vector<std::vector<int>> modes;
    double mode_mass = 0.0;        // per mode
    double background_each = 0.0;  // per non-mode sequence
};

PlantedTarget make_planted_bimodal(int V, int T, double mode_mass, Rng rng);

enum class FitObjective {
    ForwardKlMle,       // min KL(P || G) (== MLE against P or sample set)
    InverseKlVsJudger,  // judger fit on samples from P, then min KL(G || M)
    JsdMixture,         // min JSD(P || G)
};
const char* fit_objective_name(FitObjective o);

struct FitConfig {
    TabularAR::Tying tying = TabularAR::Tying::Independent;
    int rank = 0;
    int steps = 1500;
    double lr = 0.05;
    double init_stddev = 0.5;
    int judger_samples = 4000;  // InverseKlVsJudger only
    int judger_steps = 600;
    int curve_every = 25;
};

struct FitCurvePoint {
    int step;
    double objective;
    double forward_kl;
    double inverse_kl;
    double jsd;
};

struct FitResult {
    TabularAR model;
    std::vector<FitCurvePoint> curve;  // exact divergences vs the true target
    TabularAR judger;                  // meaningful for InverseKlVsJudger
    bool has_judger = false;
};

// Gradient descent (Adam) on the logits of G under the chosen objective;
// exact enumeration inside the loss. When `samples` is non-empty and the
// objective is ForwardKlMle, the empirical distribution of the samples
// replaces the exact target (this is how judger tables are fit).
FitResult fit_tabular(FitObjective obj, const TabularAR& target, const FitConfig& cfg, Rng rng,
                      std::span<const std::vector<int>> samples = {});

// ---------------------------------------------------------------------------
// experiment runner
// ---------------------------------------------------------------------------

struct LabSpec {
    int vocab = 4;
    int length = 3;
    double mode_mass = 0.48;
    std::uint64_t target_seed = 5;
    FitConfig fit;
    std::vector<FitObjective> objectives;
    std::vector<std::uint64_t> seeds;
    double junk_eps = -1.0;  // < 0: default 1 / (2 V^T)
};

LabSpec parse_lab_spec(const std::string& json_text);

struct LabSeedRecord {
    FitObjective objective;
    std::uint64_t seed;
    double forward_kl = 0.0;
    double inverse_kl = 0.0;
    double jsd = 0.0;
    double junk_mass = 0.0;
    std::vector<double> mode_masses;
    int modes_covered = 0;  // modes with G-mass >= tau
};

struct LabReport {
    LabSpec spec;
    double tau = 0.0;
    double junk_eps = 0.0;
    std::vector<LabSeedRecord> records;

    std::string to_json() const;
};

// Runs every (objective, seed) fit; when out_dir is non-empty, writes
// report.json, one CSV of divergence curves per objective, and an SVG chart.
LabReport run_lab_experiment(const LabSpec& spec, const std::string& out_dir = "");

// Minimal polyline chart; series are (x, y) pairs drawn on a shared scale.
void write_svg_curves(const std::string& path, const std::string& title,
                      const std::vector<std::pair<std::string, std::vector<std::pair<double, double>>>>& series);

}  // namespace t2t
