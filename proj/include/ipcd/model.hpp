#pragma once

#include <span>
#include <string>
#include <vector>

#include "ipcd/autodiff.hpp"
#include "ipcd/kdtree.hpp"
#include "ipcd/pcio.hpp"
#include "ipcd/projection.hpp"

namespace ipcd {

enum class Variant { Base, Full };
enum class TrainMode { Simultaneous, StepByStep };

// Which stack a parameter tensor belongs to; step-by-step training updates
// Shade first, then freezes it and updates Albedo.
enum class ParamGroup { Shared, Albedo, Shade };

struct ParamMatrix {
    int rows = 0, cols = 0;
    std::vector<double> v;

    double* data() { return v.data(); }
    const double* data() const { return v.data(); }
};

struct DenseLayer {
    ParamMatrix w, b;  // b is 1 x cols
};

// Per-point MLP (6 -> width -> width) followed by two k-NN max-aggregation
// blocks (concat self with neighborhood max, then linear+relu back to width).
struct EncoderParams {
    DenseLayer in1, in2, agg1, agg2;
};

struct HeadParams {
    DenseLayer h1, h2;
};

// Per-cell MLP on (r,g,b,coverage,area weight), area-weighted global mean
// pool, then a linear map to the 3-vector light feature.
struct PldEncoderParams {
    DenseLayer p1, p2, out;
    int grid_rows = 0, grid_cols = 0;
};

struct ModelParams {
    Variant variant = Variant::Full;
    // Ablation switches (full variant):
    bool use_pld = true;         // concat light feature into the refinement input
    bool use_refinement = true;  // false: heads read encoder features directly
    bool shared_encoder = true;  // false: separate encoder per output path
    int width = 64, head_hidden = 32, pld_hidden = 8;

    // Full variant.
    EncoderParams encoder;        // shared, or the albedo-path encoder
    EncoderParams shade_encoder;  // only used when !shared_encoder
    HeadParams pre_albedo, pre_shade;
    PldEncoderParams pld;
    HeadParams refine_albedo, refine_shade;

    // Base variant: two fully independent estimator stacks.
    EncoderParams alb_encoder_b, shd_encoder_b;
    HeadParams alb_head_b, shd_head_b;

    int refine_input_dim() const { return use_pld ? 9 : 6; }

    // Deterministic enumeration of every live tensor (name, matrix, group).
    template <typename F>
    void visit(F&& fn);
    template <typename F>
    void visit(F&& fn) const;
};

struct InitConfig {
    Variant variant = Variant::Full;
    bool use_pld = true, use_refinement = true, shared_encoder = true;
    int width = 64, head_hidden = 32, pld_hidden = 8;
    int pld_grid_rows = 9, pld_grid_cols = 36;
    uint64_t seed = 1;
};

ModelParams init_params(const InitConfig& cfg);

void save_params(const ModelParams& p, const std::string& path);
ModelParams load_params(const std::string& path);

struct Prediction {
    std::vector<Vec3> pre_albedo, pre_shade;  // empty for base / no refinement
    std::vector<Vec3> albedo, shade;
};

struct LossConfig {
    double lambda = 0.1;
    // Per-term toggles for ablation runs.
    bool use_alb = true, use_shd = true, use_phy = true, use_pre = true;
};

struct LossTerms {
    double alb = 0, shd = 0, phy = 0;
    double pre_alb = 0, pre_shd = 0, pre_phy = 0;
    double total = 0;
};

// One training batch: selected points with batch-local knn plus the
// sample-level PLD cells.
struct BatchInputs {
    int n = 0, k = 0;
    std::vector<double> x;    // n x 6 rows [pos, color]
    std::vector<int> knn;     // n x k (empty when k == 0)
    std::vector<double> pld_cells;  // cells x 5 (r,g,b,coverage,area w)
    std::vector<double> pld_pool;   // 1 x cells pooling weights (sum 1)
    int pld_rows = 0, pld_cols = 0;
    std::vector<double> truth_albedo, truth_shade, truth_input;  // n x 3
};

// `triplet` must hold normalized positions. `sel` picks the batch points;
// pass map = nullptr for the base variant.
BatchInputs make_batch(const IntrinsicTriplet& triplet, const PLDMap* map,
                       const std::vector<int>& sel, int k);

std::vector<double> pld_cell_features(const PLDMap& map, std::vector<double>* pool_weights);

// Differentiable forward pass: creates one leaf per parameter tensor on the
// tape (in visit order) and exposes predictions as tape tensors.
class ModelGraph {
  public:
    ModelGraph(ad::Tape& tape, const ModelParams& params);

    struct TapePrediction {
        ad::Tensor pre_albedo, pre_shade, albedo, shade;
        bool has_pre = false;
    };

    TapePrediction forward(const BatchInputs& in) const;

    ad::Tensor loss_total(const TapePrediction& pred, const BatchInputs& in,
                          const LossConfig& cfg, LossTerms* terms = nullptr) const;

    // Loss restricted to the step-by-step phases: 0 = shade only,
    // 1 = albedo + physical.
    ad::Tensor loss_phase(const TapePrediction& pred, const BatchInputs& in, int phase,
                          LossTerms* terms = nullptr) const;

    std::span<const ad::Tensor> leaves() const { return leaves_; }

  private:
    const ad::Tensor& leaf_of(const ParamMatrix& m) const;
    ad::Tensor dense(const ad::Tensor& x, const DenseLayer& l, bool with_relu) const;
    ad::Tensor encode(const BatchInputs& in, const EncoderParams& enc) const;
    ad::Tensor head(const ad::Tensor& x, const HeadParams& h) const;
    ad::Tensor pld_feature(const BatchInputs& in) const;

    ad::Tape* tape_;
    const ModelParams* params_;
    std::vector<ad::Tensor> leaves_;
    std::vector<const void*> leaf_keys_;
};

// Plain (tape-free) forward used for inference; matches ModelGraph::forward
// to double precision rounding.
Prediction forward_batch_raw(const BatchInputs& in, const ModelParams& params);

// Spec-level entry points on whole clouds (cloud already normalized, knn on
// all points).
Prediction forward_full(const PointCloud& normalized, const PLDMap& map,
                        const ModelParams& params, int k = 16);
Prediction forward_base(const PointCloud& normalized, const ModelParams& params, int k = 16);

// Loss on plain predictions (evaluation / reporting path).
LossTerms loss_total_raw(const Prediction& pred, const IntrinsicTriplet& truth,
                         const LossConfig& cfg);

struct TrainConfig {
    int iterations = 2000;
    int batch_points = 2048;
    int k = 16;
    double lr = 1e-3, beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    uint64_t seed = 1;
    Variant variant = Variant::Full;
    TrainMode mode = TrainMode::Simultaneous;
    bool use_pld = true, use_refinement = true, shared_encoder = true;
    int width = 64, head_hidden = 32, pld_hidden = 8;
    LossConfig loss;

    static TrainConfig from_config(const ConfigDoc& doc);
};

struct TrainSample {
    IntrinsicTriplet triplet;  // positions normalized
    PLDMap pld;                // computed on the normalized cloud
};

TrainSample make_train_sample(const IntrinsicTriplet& raw, const PLDMap* precomputed,
                              int image_size = 64, double point_size = 0.02);

// Normalize only; for variants that never read the PLD map.
TrainSample make_train_sample_no_pld(const IntrinsicTriplet& raw);

struct HistoryRow {
    int iteration = 0;
    int phase = 0;  // step-by-step phase; 0 throughout simultaneous runs
    LossTerms terms;
};

struct TrainResult {
    ModelParams params;
    std::vector<HistoryRow> history;
};

TrainResult train(const std::vector<TrainSample>& data, const TrainConfig& cfg);

void save_history_csv(const std::vector<HistoryRow>& history, const std::string& path);

// Normalizes, builds knn over all points and runs the raw forward; output
// in the input point order. Full variant requires `map`.
Prediction infer(const PointCloud& cloud, const PLDMap* map, const ModelParams& params,
                 int k = 16);

// --- template bodies ---------------------------------------------------------

template <typename F>
void ModelParams::visit(F&& fn) {
    auto layer = [&](const char* base, DenseLayer& l, ParamGroup g) {
        fn(std::string(base) + ".w", l.w, g);
        fn(std::string(base) + ".b", l.b, g);
    };
    auto encoder_v = [&](const char* base, EncoderParams& e, ParamGroup g) {
        layer((std::string(base) + ".in1").c_str(), e.in1, g);
        layer((std::string(base) + ".in2").c_str(), e.in2, g);
        layer((std::string(base) + ".agg1").c_str(), e.agg1, g);
        layer((std::string(base) + ".agg2").c_str(), e.agg2, g);
    };
    auto head_v = [&](const char* base, HeadParams& h, ParamGroup g) {
        layer((std::string(base) + ".h1").c_str(), h.h1, g);
        layer((std::string(base) + ".h2").c_str(), h.h2, g);
    };
    if (variant == Variant::Base) {
        encoder_v("shd_encoder", shd_encoder_b, ParamGroup::Shade);
        head_v("shd_head", shd_head_b, ParamGroup::Shade);
        encoder_v("alb_encoder", alb_encoder_b, ParamGroup::Albedo);
        head_v("alb_head", alb_head_b, ParamGroup::Albedo);
        return;
    }
    encoder_v("encoder", encoder, ParamGroup::Shared);
    if (!shared_encoder) encoder_v("shade_encoder", shade_encoder, ParamGroup::Shared);
    head_v("pre_albedo", pre_albedo, ParamGroup::Shared);
    head_v("pre_shade", pre_shade, ParamGroup::Shared);
    if (use_refinement) {
        if (use_pld) {
            layer("pld.p1", pld.p1, ParamGroup::Shared);
            layer("pld.p2", pld.p2, ParamGroup::Shared);
            layer("pld.out", pld.out, ParamGroup::Shared);
        }
        head_v("refine_albedo", refine_albedo, ParamGroup::Shared);
        head_v("refine_shade", refine_shade, ParamGroup::Shared);
    }
}

template <typename F>
void ModelParams::visit(F&& fn) const {
    const_cast<ModelParams*>(this)->visit(
        [&](const std::string& name, ParamMatrix& m, ParamGroup g) {
            fn(name, static_cast<const ParamMatrix&>(m), g);
        });
}

}  // namespace ipcd
