#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "forecaster/autodiff.hpp"
#include "forecaster/dataio.hpp"
#include "forecaster/transformer.hpp"

namespace forecaster::training {

struct LossConfig {
    double eta = 8e-3;
    double mape_threshold = 10.0;
    bool mape_as_fraction = true;
    // When false the training loss keeps every MAPE term; metrics always exclude.
    bool apply_threshold_in_loss = true;

    void validate() const;
    nlohmann::json to_json() const;
    static LossConfig from_json(const nlohmann::json& doc);
};

// Predictions and truths are T' x N blocks, one per job, in signal units.
double rmse(std::span<const ad::Tensor> predictions, std::span<const ad::Tensor> truths);

struct MapeResult {
    double value = 0.0;  // fraction
    std::size_t included = 0;
    std::size_t excluded = 0;
    bool all_excluded = false;
};

MapeResult mape(std::span<const ad::Tensor> predictions, std::span<const ad::Tensor> truths, double threshold);

// Counts that turn per-job loss terms into pooled batch statistics.
struct LossNormalizer {
    std::size_t total = 0;
    std::size_t included = 0;
};

LossNormalizer loss_normalizer(std::span<const ad::Tensor> truths, const LossConfig& config);

// This job's share of eta * MSE + MAPE over the whole batch described by `norm`.
ad::Var job_loss(ad::Tape& tape, ad::Var prediction, const ad::Tensor& truth, const LossConfig& config,
                 const LossNormalizer& norm);

// Batch loss on one tape: sum of job_loss over all jobs.
ad::Var loss(ad::Tape& tape, std::span<const ad::Var> predictions, std::span<const ad::Tensor> truths,
             const LossConfig& config);

// Plain-value version of `loss`.
double loss_value(std::span<const ad::Tensor> predictions, std::span<const ad::Tensor> truths,
                  const LossConfig& config);

struct TrainingSchedule {
    std::size_t epochs = 20;
    std::size_t batch_size = 32;
    double learning_rate = 1e-3;
    std::size_t patience = 5;  // 0 disables early stopping
    std::size_t max_steps = 0;  // 0 means no cap
    std::uint64_t seed = 0;

    void validate() const;
    nlohmann::json to_json() const;
    static TrainingSchedule from_json(const nlohmann::json& doc);
};

struct EpochRecord {
    std::size_t epoch = 0;  // 1-based
    double train_loss = 0.0;
    double val_loss = 0.0;
};

struct TrainingResult {
    std::vector<EpochRecord> history;
    std::size_t best_epoch = 0;
    double best_val_loss = 0.0;
    std::size_t steps = 0;
};

// Model-unit tensors for one job.
struct PreparedJob {
    ad::Tensor history;
    ad::Tensor decoder_inputs;
    ad::Tensor future_aux;
    ad::Tensor truths;  // signal units
};

PreparedJob prepare_job(const transformer::ForecasterModel& model, const dataio::Job& job);
std::vector<PreparedJob> prepare_jobs(const transformer::ForecasterModel& model, std::span<const dataio::Job> jobs);

// Teacher-forced predictions for one job on `tape`, converted to signal units.
ad::Var teacher_forced_prediction(transformer::Binder& bind, const transformer::ForecasterModel& model,
                                  const PreparedJob& job);

// Gradient of the batch loss over `indices`; returns the loss value. Jobs run
// on separate tapes and their gradients are summed in index order.
double batch_gradient(const transformer::ForecasterModel& model, std::span<const PreparedJob> jobs,
                      std::span<const std::size_t> indices, const LossConfig& config,
                      transformer::GradientBuffer& grads);

using EpochCallback = std::function<void(const EpochRecord&)>;

// Teacher-forced Adam training. Validation loss uses autoregressive forecasts;
// with early stopping the parameters of the best validation epoch are restored.
TrainingResult train(transformer::ForecasterModel& model, std::span<const PreparedJob> train_jobs,
                     std::span<const PreparedJob> val_jobs, const TrainingSchedule& schedule,
                     const LossConfig& config, const EpochCallback& on_epoch = {});

// Autoregressive forecasts in signal units, one T' x N block per job.
std::vector<ad::Tensor> forecast(const transformer::ForecasterModel& model, std::span<const PreparedJob> jobs);

struct EvalReport {
    std::string model;
    std::size_t jobs = 0;
    std::size_t horizon = 0;
    double rmse = 0.0;
    double mape = 0.0;  // fraction
    std::vector<double> rmse_per_step;
    std::vector<double> mape_per_step;
    std::size_t mape_excluded = 0;
    std::vector<std::size_t> mape_excluded_per_step;
    bool mape_all_excluded = false;
    double mape_threshold = 10.0;
    std::uint64_t seed = 0;
    std::string config_hash;

    nlohmann::json to_json() const;
    static EvalReport from_json(const nlohmann::json& doc);
};

EvalReport evaluate_predictions(std::span<const ad::Tensor> predictions, std::span<const ad::Tensor> truths,
                                double threshold);
EvalReport evaluate(const transformer::ForecasterModel& model, std::span<const PreparedJob> jobs, double threshold);

// Thread count from FORECASTER_THREADS, else hardware concurrency.
std::size_t worker_count();
// Runs body(i) for i in [0, n) on up to worker_count() threads.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

void write_report(const std::string& path, const EvalReport& report);
EvalReport read_report(const std::string& path);
// Per-step table: one row per metric, columns next / second next / third next ... and average. MAPE in percent.
void write_step_table(const std::string& path, std::span<const EvalReport> reports, const std::string& config_hash);
void write_loss_curve(const std::string& path, std::span<const EpochRecord> history, bool validation,
                      const std::string& config_hash);

}  // namespace forecaster::training
