#include "forecaster/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <numeric>
#include <thread>

#include "forecaster/error.hpp"
#include "forecaster/random.hpp"

namespace forecaster::training {

namespace {

void check_pairs(std::span<const ad::Tensor> predictions, std::span<const ad::Tensor> truths) {
    if (predictions.size() != truths.size()) {
        fail(ErrorKind::Dimension, "got " + std::to_string(predictions.size()) + " prediction blocks for " +
                                       std::to_string(truths.size()) + " truth blocks");
    }
    for (std::size_t j = 0; j < truths.size(); ++j) {
        if (predictions[j].shape != truths[j].shape) {
            fail(ErrorKind::Dimension, "job " + std::to_string(j) + ": prediction shape " +
                                           ad::shape_string(predictions[j].shape) + " vs truth " +
                                           ad::shape_string(truths[j].shape));
        }
    }
}

bool mape_term_included(double truth, const LossConfig& config) {
    if (config.apply_threshold_in_loss) return truth >= config.mape_threshold;
    return truth != 0.0;
}

std::string step_label(std::size_t k) {
    static const char* names[] = {"next_step", "second_next_step", "third_next_step"};
    return k < 3 ? names[k] : "step_" + std::to_string(k + 1);
}

struct ParamSnapshot {
    std::vector<std::vector<double>> values;
};

ParamSnapshot snapshot(const transformer::ForecasterModel& model) {
    ParamSnapshot s;
    for (const auto& p : model.parameters()) s.values.push_back(p.tensor->values);
    return s;
}

void restore(transformer::ForecasterModel& model, const ParamSnapshot& s) {
    auto refs = model.parameters();
    for (std::size_t k = 0; k < refs.size(); ++k) refs[k].tensor->values = s.values[k];
}

}  // namespace

void LossConfig::validate() const {
    if (!(eta >= 0.0)) fail(ErrorKind::Configuration, "loss eta must be non-negative");
    if (!(mape_threshold >= 0.0)) fail(ErrorKind::Configuration, "MAPE threshold must be non-negative");
}

nlohmann::json LossConfig::to_json() const {
    return {{"eta", eta},
            {"mape_threshold", mape_threshold},
            {"mape_as_fraction", mape_as_fraction},
            {"apply_threshold_in_loss", apply_threshold_in_loss}};
}

LossConfig LossConfig::from_json(const nlohmann::json& doc) {
    LossConfig c;
    c.eta = doc.value("eta", c.eta);
    c.mape_threshold = doc.value("mape_threshold", c.mape_threshold);
    c.mape_as_fraction = doc.value("mape_as_fraction", c.mape_as_fraction);
    c.apply_threshold_in_loss = doc.value("apply_threshold_in_loss", c.apply_threshold_in_loss);
    c.validate();
    return c;
}

double rmse(std::span<const ad::Tensor> predictions, std::span<const ad::Tensor> truths) {
    check_pairs(predictions, truths);
    double ss = 0.0;
    std::size_t count = 0;
    for (std::size_t j = 0; j < truths.size(); ++j) {
        for (std::size_t k = 0; k < truths[j].size(); ++k) {
            const double d = predictions[j].values[k] - truths[j].values[k];
            ss += d * d;
        }
        count += truths[j].size();
    }
    if (count == 0) fail(ErrorKind::EmptyEvaluation, "RMSE over an empty set");
    return std::sqrt(ss / static_cast<double>(count));
}

MapeResult mape(std::span<const ad::Tensor> predictions, std::span<const ad::Tensor> truths, double threshold) {
    check_pairs(predictions, truths);
    MapeResult r;
    double total = 0.0;
    for (std::size_t j = 0; j < truths.size(); ++j) {
        for (std::size_t k = 0; k < truths[j].size(); ++k) {
            const double x = truths[j].values[k];
            if (x < threshold) {
                ++r.excluded;
                continue;
            }
            total += std::abs(predictions[j].values[k] - x) / x;
            ++r.included;
        }
    }
    r.all_excluded = r.included == 0;
    r.value = r.all_excluded ? 0.0 : total / static_cast<double>(r.included);
    return r;
}

LossNormalizer loss_normalizer(std::span<const ad::Tensor> truths, const LossConfig& config) {
    LossNormalizer n;
    for (const auto& t : truths) {
        n.total += t.size();
        for (double x : t.values) n.included += mape_term_included(x, config) ? 1 : 0;
    }
    return n;
}

ad::Var job_loss(ad::Tape& tape, ad::Var prediction, const ad::Tensor& truth, const LossConfig& config,
                 const LossNormalizer& norm) {
    if (tape.value(prediction).shape != truth.shape) {
        fail(ErrorKind::Dimension, "loss: prediction " + ad::shape_string(tape.value(prediction).shape) +
                                       " vs truth " + ad::shape_string(truth.shape));
    }
    if (norm.total == 0) fail(ErrorKind::EmptyEvaluation, "loss over an empty batch");
    ad::Var diff = tape.sub(prediction, tape.constant(ad::Tensor(truth.shape, truth.values)));
    ad::Var mse = tape.scale(tape.sum(tape.square(diff)), config.eta / static_cast<double>(norm.total));
    ad::Tensor weights(truth.shape, std::vector<double>(truth.size(), 0.0));
    if (norm.included > 0) {
        const double pct = config.mape_as_fraction ? 1.0 : 100.0;
        for (std::size_t k = 0; k < truth.size(); ++k) {
            const double x = truth.values[k];
            if (mape_term_included(x, config)) weights.values[k] = pct / (std::abs(x) * static_cast<double>(norm.included));
        }
    }
    ad::Var ape = tape.sum(tape.mul(tape.abs(diff), weights));
    return tape.add(mse, ape);
}

ad::Var loss(ad::Tape& tape, std::span<const ad::Var> predictions, std::span<const ad::Tensor> truths,
             const LossConfig& config) {
    if (predictions.size() != truths.size()) fail(ErrorKind::Dimension, "loss: job count mismatch");
    const LossNormalizer norm = loss_normalizer(truths, config);
    ad::Var total;
    for (std::size_t j = 0; j < truths.size(); ++j) {
        ad::Var term = job_loss(tape, predictions[j], truths[j], config, norm);
        total = total.valid() ? tape.add(total, term) : term;
    }
    if (!total.valid()) fail(ErrorKind::EmptyEvaluation, "loss over an empty batch");
    return total;
}

double loss_value(std::span<const ad::Tensor> predictions, std::span<const ad::Tensor> truths,
                  const LossConfig& config) {
    check_pairs(predictions, truths);
    const LossNormalizer norm = loss_normalizer(truths, config);
    if (norm.total == 0) fail(ErrorKind::EmptyEvaluation, "loss over an empty batch");
    double ss = 0.0;
    double ape = 0.0;
    for (std::size_t j = 0; j < truths.size(); ++j) {
        for (std::size_t k = 0; k < truths[j].size(); ++k) {
            const double x = truths[j].values[k];
            const double d = predictions[j].values[k] - x;
            ss += d * d;
            if (mape_term_included(x, config)) ape += std::abs(d) / std::abs(x);
        }
    }
    double out = config.eta * ss / static_cast<double>(norm.total);
    if (norm.included > 0) out += (config.mape_as_fraction ? 1.0 : 100.0) * ape / static_cast<double>(norm.included);
    return out;
}

void TrainingSchedule::validate() const {
    if (batch_size == 0) fail(ErrorKind::Configuration, "batch_size must be positive");
    if (!(learning_rate > 0.0)) fail(ErrorKind::Configuration, "learning_rate must be positive");
}

nlohmann::json TrainingSchedule::to_json() const {
    return {{"epochs", epochs},       {"batch_size", batch_size}, {"learning_rate", learning_rate},
            {"patience", patience},   {"max_steps", max_steps},   {"seed", seed}};
}

TrainingSchedule TrainingSchedule::from_json(const nlohmann::json& doc) {
    TrainingSchedule s;
    s.epochs = doc.value("epochs", s.epochs);
    s.batch_size = doc.value("batch_size", s.batch_size);
    s.learning_rate = doc.value("learning_rate", s.learning_rate);
    s.patience = doc.value("patience", s.patience);
    s.max_steps = doc.value("max_steps", s.max_steps);
    s.seed = doc.value("seed", s.seed);
    s.validate();
    return s;
}

PreparedJob prepare_job(const transformer::ForecasterModel& model, const dataio::Job& job) {
    const std::size_t n = model.config.n_locations;
    if (job.truths.cols() != n || job.history.cols() != model.config.input_width()) {
        fail(ErrorKind::Dimension, "job shape does not match the model's location/aux counts");
    }
    PreparedJob p;
    p.history = ad::Tensor(job.history.shape, job.history.values);
    p.decoder_inputs = ad::Tensor(job.decoder_inputs.shape, job.decoder_inputs.values);
    p.future_aux = ad::Tensor(job.future_aux.shape, job.future_aux.values);
    p.truths = ad::Tensor(job.truths.shape, job.truths.values);
    for (ad::Tensor* t : {&p.history, &p.decoder_inputs}) {
        for (std::size_t r = 0; r < t->rows(); ++r) {
            for (std::size_t i = 0; i < n; ++i) {
                (*t)(r, i) = ((*t)(r, i) - model.signal_mean[i]) / model.signal_scale[i];
            }
        }
    }
    return p;
}

std::vector<PreparedJob> prepare_jobs(const transformer::ForecasterModel& model, std::span<const dataio::Job> jobs) {
    std::vector<PreparedJob> out;
    out.reserve(jobs.size());
    for (const auto& j : jobs) out.push_back(prepare_job(model, j));
    return out;
}

ad::Var teacher_forced_prediction(transformer::Binder& bind, const transformer::ForecasterModel& model,
                                  const PreparedJob& job) {
    ad::Tape& tape = bind.tape();
    ad::Var enc = transformer::encoder_forward(bind, model, tape.constant(ad::Tensor(job.history.shape, job.history.values)));
    ad::Var out = transformer::decoder_forward(
        bind, model, tape.constant(ad::Tensor(job.decoder_inputs.shape, job.decoder_inputs.values)), enc);
    ad::Var scaled = tape.scale_by_vector(out, model.signal_scale);
    const std::size_t n = model.config.n_locations;
    return tape.add_row_vector(scaled, tape.constant(ad::Tensor({1, n}, model.signal_mean)));
}

double batch_gradient(const transformer::ForecasterModel& model, std::span<const PreparedJob> jobs,
                      std::span<const std::size_t> indices, const LossConfig& config,
                      transformer::GradientBuffer& grads) {
    std::vector<ad::Tensor> truths;
    truths.reserve(indices.size());
    for (std::size_t idx : indices) truths.emplace_back(jobs[idx].truths.shape, jobs[idx].truths.values);
    const LossNormalizer norm = loss_normalizer(truths, config);

    std::vector<transformer::GradientBuffer> per_job(indices.size());
    std::vector<double> values(indices.size(), 0.0);
    parallel_for(indices.size(), [&](std::size_t k) {
        per_job[k] = transformer::GradientBuffer::zeros_like(model);
        ad::Tape tape;
        transformer::Binder bind(tape, model, per_job[k]);
        ad::Var pred = teacher_forced_prediction(bind, model, jobs[indices[k]]);
        ad::Var l = job_loss(tape, pred, truths[k], config, norm);
        values[k] = tape.value(l).values[0];
        tape.backward(l);
    });
    double total = 0.0;
    for (std::size_t k = 0; k < indices.size(); ++k) {
        total += values[k];
        grads.add(per_job[k]);
    }
    return total;
}

std::vector<ad::Tensor> forecast(const transformer::ForecasterModel& model, std::span<const PreparedJob> jobs) {
    std::vector<ad::Tensor> out(jobs.size());
    parallel_for(jobs.size(), [&](std::size_t j) {
        ad::Tensor pred = transformer::autoregressive_forecast(model, jobs[j].history, jobs[j].future_aux);
        const std::size_t n = model.config.n_locations;
        for (std::size_t r = 0; r < pred.rows(); ++r) {
            for (std::size_t i = 0; i < n; ++i) pred(r, i) = pred(r, i) * model.signal_scale[i] + model.signal_mean[i];
        }
        out[j] = std::move(pred);
    });
    return out;
}

namespace {

double validation_loss(const transformer::ForecasterModel& model, std::span<const PreparedJob> jobs,
                       const LossConfig& config) {
    const auto preds = forecast(model, jobs);
    std::vector<ad::Tensor> truths;
    truths.reserve(jobs.size());
    for (const auto& j : jobs) truths.emplace_back(j.truths.shape, j.truths.values);
    return loss_value(preds, truths, config);
}

}  // namespace

TrainingResult train(transformer::ForecasterModel& model, std::span<const PreparedJob> train_jobs,
                     std::span<const PreparedJob> val_jobs, const TrainingSchedule& schedule,
                     const LossConfig& config, const EpochCallback& on_epoch) {
    schedule.validate();
    config.validate();
    TrainingResult result;
    if (schedule.epochs == 0) return result;
    if (train_jobs.empty()) fail(ErrorKind::InsufficientData, "no training jobs");

    ad::AdamConfig adam;
    adam.lr = schedule.learning_rate;
    const auto params = model.parameters();
    std::vector<ad::AdamState> states(params.size());
    Rng rng(derive_seed(schedule.seed, 0x7472));

    std::vector<std::size_t> order(train_jobs.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    ParamSnapshot best;
    bool have_best = false;
    std::size_t since_best = 0;
    std::size_t batch_id = 0;

    for (std::size_t epoch = 1; epoch <= schedule.epochs; ++epoch) {
        for (std::size_t k = order.size(); k > 1; --k) std::swap(order[k - 1], order[rng.below(k)]);
        double epoch_loss = 0.0;
        std::size_t batches = 0;
        bool capped = false;
        for (std::size_t start = 0; start < order.size(); start += schedule.batch_size) {
            const std::size_t stop = std::min(order.size(), start + schedule.batch_size);
            std::span<const std::size_t> batch(order.data() + start, stop - start);
            auto grads = transformer::GradientBuffer::zeros_like(model);
            const double l = batch_gradient(model, train_jobs, batch, config, grads);
            if (!std::isfinite(l)) {
                fail(ErrorKind::NonfiniteLoss, "nonfinite training loss in batch " + std::to_string(batch_id) +
                                                   " (epoch " + std::to_string(epoch) + ")");
            }
            for (std::size_t p = 0; p < params.size(); ++p) {
                try {
                    ad::check_finite_gradient(params[p].name, grads.grads[p]);
                } catch (const Error& e) {
                    fail(ErrorKind::NonfiniteGradient, std::string(e.what()) + " in batch " + std::to_string(batch_id));
                }
            }
            for (std::size_t p = 0; p < params.size(); ++p) {
                ad::adam_step(params[p].name, *params[p].tensor, grads.grads[p], states[p], adam);
            }
            epoch_loss += l;
            ++batches;
            ++batch_id;
            ++result.steps;
            if (schedule.max_steps != 0 && result.steps >= schedule.max_steps) {
                capped = true;
                break;
            }
        }
        EpochRecord rec;
        rec.epoch = epoch;
        rec.train_loss = epoch_loss / static_cast<double>(batches);
        rec.val_loss = val_jobs.empty() ? rec.train_loss : validation_loss(model, val_jobs, config);
        result.history.push_back(rec);
        if (on_epoch) on_epoch(rec);

        if (!have_best || rec.val_loss < result.best_val_loss) {
            result.best_val_loss = rec.val_loss;
            result.best_epoch = epoch;
            best = snapshot(model);
            have_best = true;
            since_best = 0;
        } else {
            ++since_best;
        }
        if (capped) break;
        if (schedule.patience != 0 && since_best >= schedule.patience) break;
    }
    if (schedule.patience != 0 && have_best) restore(model, best);
    model.audit_masks();
    return result;
}

EvalReport evaluate_predictions(std::span<const ad::Tensor> predictions, std::span<const ad::Tensor> truths,
                                double threshold) {
    check_pairs(predictions, truths);
    if (truths.empty() || truths.front().size() == 0) fail(ErrorKind::EmptyEvaluation, "nothing to evaluate");
    EvalReport r;
    r.jobs = truths.size();
    r.horizon = truths.front().rows();
    r.mape_threshold = threshold;
    r.rmse = rmse(predictions, truths);
    const MapeResult pooled = mape(predictions, truths, threshold);
    r.mape = pooled.value;
    r.mape_excluded = pooled.excluded;
    r.mape_all_excluded = pooled.all_excluded;
    for (std::size_t k = 0; k < r.horizon; ++k) {
        std::vector<ad::Tensor> p_step, t_step;
        for (std::size_t j = 0; j < truths.size(); ++j) {
            if (truths[j].rows() != r.horizon) fail(ErrorKind::Dimension, "jobs have different horizons");
            const std::size_t n = truths[j].cols();
            auto row = [&](const ad::Tensor& t) {
                return ad::Tensor({1, n}, std::vector<double>(t.values.begin() + k * n, t.values.begin() + (k + 1) * n));
            };
            p_step.push_back(row(predictions[j]));
            t_step.push_back(row(truths[j]));
        }
        r.rmse_per_step.push_back(rmse(p_step, t_step));
        const MapeResult m = mape(p_step, t_step, threshold);
        r.mape_per_step.push_back(m.value);
        r.mape_excluded_per_step.push_back(m.excluded);
    }
    return r;
}

EvalReport evaluate(const transformer::ForecasterModel& model, std::span<const PreparedJob> jobs, double threshold) {
    if (jobs.empty()) fail(ErrorKind::EmptyEvaluation, "evaluation dataset has no jobs");
    const auto preds = forecast(model, jobs);
    std::vector<ad::Tensor> truths;
    truths.reserve(jobs.size());
    for (const auto& j : jobs) truths.emplace_back(j.truths.shape, j.truths.values);
    EvalReport r = evaluate_predictions(preds, truths, threshold);
    r.model = "forecaster";
    r.seed = model.seed;
    return r;
}

nlohmann::json EvalReport::to_json() const {
    return {{"model", model},
            {"jobs", jobs},
            {"horizon", horizon},
            {"rmse", rmse},
            {"mape", mape},
            {"rmse_per_step", rmse_per_step},
            {"mape_per_step", mape_per_step},
            {"mape_excluded", mape_excluded},
            {"mape_excluded_per_step", mape_excluded_per_step},
            {"mape_all_excluded", mape_all_excluded},
            {"mape_threshold", mape_threshold},
            {"seed", seed},
            {"config_hash", config_hash}};
}

EvalReport EvalReport::from_json(const nlohmann::json& doc) {
    EvalReport r;
    try {
        r.model = doc.at("model").get<std::string>();
        r.jobs = doc.at("jobs").get<std::size_t>();
        r.horizon = doc.at("horizon").get<std::size_t>();
        r.rmse = doc.at("rmse").get<double>();
        r.mape = doc.at("mape").get<double>();
        r.rmse_per_step = doc.at("rmse_per_step").get<std::vector<double>>();
        r.mape_per_step = doc.at("mape_per_step").get<std::vector<double>>();
        r.mape_excluded = doc.at("mape_excluded").get<std::size_t>();
        r.mape_excluded_per_step = doc.at("mape_excluded_per_step").get<std::vector<std::size_t>>();
        r.mape_all_excluded = doc.at("mape_all_excluded").get<bool>();
        r.mape_threshold = doc.at("mape_threshold").get<double>();
        r.seed = doc.at("seed").get<std::uint64_t>();
        r.config_hash = doc.at("config_hash").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::Parse, std::string("bad evaluation report: ") + e.what());
    }
    return r;
}

std::size_t worker_count() {
    std::size_t n = std::max(1u, std::thread::hardware_concurrency());
    if (const char* env = std::getenv("FORECASTER_THREADS")) {
        char* end = nullptr;
        const long v = std::strtol(env, &end, 10);
        if (end != env && v > 0) n = static_cast<std::size_t>(v);
    }
    return n;
}

void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body) {
    const std::size_t workers = std::min(worker_count(), n);
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) body(i);
        return;
    }
    std::vector<std::exception_ptr> errors(workers);
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
            try {
                for (std::size_t i = w; i < n; i += workers) body(i);
            } catch (...) {
                errors[w] = std::current_exception();
            }
        });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
}

void write_report(const std::string& path, const EvalReport& report) {
    std::ofstream out(path);
    if (!out) fail(ErrorKind::Io, "cannot write " + path);
    out << report.to_json().dump(2) << '\n';
}

EvalReport read_report(const std::string& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorKind::Dependency, "missing evaluation report " + path);
    try {
        return EvalReport::from_json(nlohmann::json::parse(in));
    } catch (const nlohmann::json::parse_error& e) {
        fail(ErrorKind::Parse, path + ": " + e.what());
    }
}

void write_step_table(const std::string& path, std::span<const EvalReport> reports, const std::string& config_hash) {
    std::ofstream out(path);
    if (!out) fail(ErrorKind::Io, "cannot write " + path);
    if (!config_hash.empty()) out << "# config_hash=" << config_hash << '\n';
    const std::size_t horizon = reports.empty() ? 0 : reports.front().horizon;
    out << "model,metric";
    for (std::size_t k = 0; k < horizon; ++k) out << ',' << step_label(k);
    out << ",average\n";
    for (const auto& r : reports) {
        out << r.model << ",RMSE";
        for (double v : r.rmse_per_step) out << ',' << format_double(v);
        out << ',' << format_double(r.rmse) << '\n';
        out << r.model << ",MAPE(%)";
        for (double v : r.mape_per_step) out << ',' << format_double(100.0 * v);
        out << ',' << format_double(100.0 * r.mape) << '\n';
    }
}

void write_loss_curve(const std::string& path, std::span<const EpochRecord> history, bool validation,
                      const std::string& config_hash) {
    std::ofstream out(path);
    if (!out) fail(ErrorKind::Io, "cannot write " + path);
    if (!config_hash.empty()) out << "# config_hash=" << config_hash << '\n';
    out << "epoch,loss\n";
    for (const auto& e : history) out << e.epoch << ',' << format_double(validation ? e.val_loss : e.train_loss) << '\n';
}

}  // namespace forecaster::training
