// Event-stream ball detector: population-coded x/y classification heads on a
// spiking network, MSE training with surrogate-gradient BPTT, synaptic
// operation accounting and pixel-error evaluation.

#pragma once

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "ttv/event_sim.hpp"
#include "ttv/snn_core.hpp"

namespace ttv::snn {

struct OutOfRange : std::runtime_error {
    OutOfRange() : std::runtime_error("class index outside [0, 127]") {}
};
struct EmptyDataset : std::runtime_error {
    EmptyDataset() : std::runtime_error("dataset is empty") {}
};
struct DivergedLoss : std::runtime_error {
    DivergedLoss() : std::runtime_error("training loss became non-finite") {}
};

// 256-entry target: 1.0 at the class neuron, 0.5 at existing neighbours, in
// each 128-wide half (x first, then y).
std::vector<float> encode_target(int x, int y);

struct Detection {
    int x = 0;
    int y = 0;
    double confidence = 0.0;  // mean rate of the two winning neurons
};

// Argmax per half; ties break toward the lower index.
Detection decode(const std::vector<float>& rates);

double loss_mse(const std::vector<float>& rates, const std::vector<float>& target);

SpikeInput spike_input_from_frames(const SpikeFrameSequence& frames);

struct Sample {
    SpikeInput input;
    int label_x = 0;
    int label_y = 0;
};

struct Dataset {
    std::vector<Sample> samples;
};

using Network = NetworkT<float>;

std::pair<std::vector<float>, SynOpsReport> forward_rates(const Network& net,
                                                          const SpikeInput& input);

enum class LossKind { mse, cross_entropy };

struct TrainOptions {
    int epochs = 10;
    double learning_rate = 1e-3;
    int batch_size = 32;
    LossKind loss = LossKind::mse;
    uint64_t shuffle_seed = 7;
    int threads = 0;  // 0: hardware concurrency
};

struct EpochStats {
    int epoch = 0;
    double loss = 0.0;
    double px_error = 0.0;
    std::array<double, 4> spikes_per_layer{};  // mean emitted per forward pass
    double synops = 0.0;                       // mean per forward pass
};

struct TrainLog {
    std::vector<EpochStats> epochs;
};

// Mini-batch Adam over surrogate-gradient BPTT. Deterministic for a fixed
// seed, thread count and machine.
TrainLog train(Network& net, const Dataset& data, const TrainOptions& opts);

struct EvalResult {
    double mean_px_error = 0.0;
    double std_px_error = 0.0;
    double mean_synops = 0.0;
    std::array<double, 4> mean_spikes{};
    size_t count = 0;
};

EvalResult evaluate(const Network& net, const Dataset& data, int threads = 0);

// Pooled evaluation across several trained networks ("across N networks"
// reporting): mean of per-network means, std across networks.
EvalResult evaluate_ensemble(const std::vector<const Network*>& nets, const Dataset& data,
                             int threads = 0);

struct CompareReport {
    EvalResult mse_eval;
    EvalResult ce_eval;
    double mse_final_loss = 0.0;
    double ce_final_loss = 0.0;
    double synops_ratio_ce_over_mse = 0.0;
    bool reproduced = false;  // true when the CE run spends more SynOps
};

// Trains one network with MSE and one with cross-entropy from the same seed
// and protocol, then compares activity.
CompareReport compare_loss_activity(const NetworkConfig& config, const Dataset& train_data,
                                    const Dataset& eval_data, const TrainOptions& base_options);

// Weights file: magic "SNNW", version, config echo, float32 parameters in
// document order (conv1 W,b | conv2 W,b | fc1 W [out][in], b | fc2 W, b).
void save_weights(const Network& net, const std::string& path);
Network load_weights(const std::string& path);

// Training log CSV: epoch,loss,px_error,spikes_l1..l4,synops.
void save_train_log_csv(const TrainLog& log, const std::string& path);

}  // namespace ttv::snn
