#include "solargeco/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include "solargeco/errors.hpp"
#include "solargeco/metrics.hpp"
#include "solargeco/optim.hpp"
#include "solargeco/rng.hpp"

namespace solargeco {

double lr_at_epoch(const TrainSettings& s, size_t epoch) {
    if (epoch < 1) throw ContractError("lr_at_epoch: epochs are 1-based");
    if (s.warmup_epochs > 0 && epoch <= s.warmup_epochs)
        return s.lr_main * static_cast<double>(epoch) /
               static_cast<double>(s.warmup_epochs);
    const double span = static_cast<double>(s.total_epochs - s.warmup_epochs);
    double t = span > 0.0
                   ? static_cast<double>(epoch - s.warmup_epochs) / span
                   : 1.0;
    t = std::min(t, 1.0);
    return s.lr_main * 0.5 * (1.0 + std::cos(kPi * t));
}

std::string format_epoch_line(const EpochStats& e) {
    char buf[192];
    std::snprintf(buf, sizeof(buf),
                  "epoch %4zu  lr %.10e  train %.10e  val %.10e  mae %.10e  r2 %.10e",
                  e.epoch, e.lr, e.train_loss, e.val_loss, e.val_mae, e.val_r2);
    return buf;
}

void write_training_log(const std::string& path, const TrainingLog& log) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open for writing: " + path);
    out << "epoch,lr,train_loss,val_loss,val_mae,val_r2\n";
    out.precision(17);
    for (const EpochStats& e : log.epochs)
        out << e.epoch << ',' << e.lr << ',' << e.train_loss << ',' << e.val_loss << ','
            << e.val_mae << ',' << e.val_r2 << '\n';
    out << "best_epoch," << log.best_epoch << '\n';
    out << "stopped_early," << (log.stopped_early ? 1 : 0) << '\n';
    if (!out) throw DataError("write failed: " + path);
}

std::vector<PredictionRow> predict_ids(SolarGeco& model, const PreparedDataset& prep,
                                       std::span<const std::string> ids,
                                       size_t batch_size) {
    if (batch_size == 0) throw ContractError("predict_ids: batch_size must be positive");
    std::vector<PredictionRow> rows;
    rows.reserve(ids.size());
    for (size_t start = 0; start < ids.size(); start += batch_size) {
        const size_t count = std::min(batch_size, ids.size() - start);
        const DeviceBatch batch = build_batch(prep, ids.subspan(start, count));
        const std::vector<PredictionDistribution> preds = model.predict(batch);
        for (size_t i = 0; i < count; ++i)
            rows.push_back({batch.devices[i]->device_id, batch.devices[i]->pce,
                            preds[i].mu, preds[i].sigma});
    }
    return rows;
}

TrainingLog train_model(SolarGeco& model, const PreparedDataset& prep,
                        const DatasetSplit& split, const TrainSettings& settings,
                        const std::function<void(const std::string&)>& log_line) {
    if (split.train.empty()) throw ContractError("train_model: empty training part");
    if (split.val.empty()) throw ContractError("train_model: empty validation part");
    if (settings.total_epochs == 0)
        throw ContractError("train_model: total_epochs must be positive");

    std::vector<size_t> train_idx;
    train_idx.reserve(split.train.size());
    for (const std::string& id : split.train)
        train_idx.push_back(prep.by_id.count(id) ? prep.by_id.at(id)
                                                 : throw DataError("train id '" + id +
                                                                   "' not in dataset"));
    std::vector<double> val_y;
    val_y.reserve(split.val.size());
    for (const std::string& id : split.val) val_y.push_back(prep.at(id).pce);

    ParamStore& store = model.params();
    for (const auto& p : store.all())
        if (p->name.rfind("text.", 0) == 0) p->lr_scale = settings.lr_text_multiplier;

    {
        double mean = 0.0;
        for (size_t i : train_idx) mean += prep.devices[i].pce;
        mean /= static_cast<double>(train_idx.size());
        double var = 0.0;
        for (size_t i : train_idx) {
            const double d = prep.devices[i].pce - mean;
            var += d * d;
        }
        var /= static_cast<double>(train_idx.size());
        const double scale = var > 1e-24 ? std::sqrt(var) : 1.0;
        model.set_target_stats(mean, scale);
    }

    AdamW opt(store, {settings.lr_main, settings.beta1, settings.beta2, settings.eps,
                      settings.weight_decay});

    TrainingLog log;
    double best_val = std::numeric_limits<double>::infinity();
    std::vector<std::vector<double>> best_params;
    const bool nll_head = model.config().head == HeadVariant::gaussian_nll;

    for (size_t epoch = 1; epoch <= settings.total_epochs; ++epoch) {
        const double lr = lr_at_epoch(settings, epoch);
        opt.set_lr(lr);

        std::vector<size_t> order = train_idx;
        Rng shuffle_rng(mix_keys(settings.seed, epoch));
        shuffle_rng.shuffle(order);

        double loss_sum = 0.0;
        size_t device_count = 0;
        size_t batch_no = 0;
        for (size_t start = 0; start < order.size(); start += settings.batch_size) {
            const size_t count = std::min(settings.batch_size, order.size() - start);
            const DeviceBatch batch = build_batch_indices(
                prep, std::span<const size_t>(order).subspan(start, count));

            Tape tape(mix_keys(mix_keys(settings.seed, epoch), batch_no));
            SolarGeco::Output out = model.forward(tape, batch, /*training=*/true);
            const Tensor loss = model.loss(tape, out, batch.targets);
            const double loss_value = loss.scalar();
            if (!std::isfinite(loss_value))
                throw NumericError(
                    "training loss became non-finite at epoch " + std::to_string(epoch) +
                    ", batch " + std::to_string(batch_no) + " (lr=" + std::to_string(lr) +
                    ", batch size " + std::to_string(count) + ")");

            store.zero_grad();
            tape.backward(loss);
            opt.step();

            loss_sum += loss_value * static_cast<double>(count);
            device_count += count;
            ++batch_no;
        }

        const std::vector<PredictionRow> val_rows =
            predict_ids(model, prep, split.val, settings.batch_size);
        std::vector<double> val_mu, val_sigma;
        std::vector<PredictionDistribution> val_pred;
        val_mu.reserve(val_rows.size());
        val_sigma.reserve(val_rows.size());
        val_pred.reserve(val_rows.size());
        for (const PredictionRow& r : val_rows) {
            val_mu.push_back(r.mu);
            val_sigma.push_back(r.sigma);
            val_pred.push_back({r.mu, r.sigma});
        }

        EpochStats stats;
        stats.epoch = epoch;
        stats.lr = lr;
        stats.train_loss = loss_sum / static_cast<double>(device_count);
        stats.val_loss = nll_head ? nll_value(val_pred, val_y) : mse_value(val_pred, val_y);
        stats.val_mae = mae(val_y, val_mu);
        stats.val_r2 = r2(val_y, val_mu);
        log.epochs.push_back(stats);
        if (log_line) log_line(format_epoch_line(stats));

        if (stats.val_loss < best_val) {
            best_val = stats.val_loss;
            log.best_epoch = epoch;
            best_params.clear();
            for (const auto& p : store.all()) best_params.push_back(p->value);
        }

        const size_t anchor = std::max(log.best_epoch, settings.warmup_epochs);
        if (epoch >= anchor && epoch - anchor >= settings.patience) {
            log.stopped_early = epoch < settings.total_epochs;
            break;
        }
    }

    if (!best_params.empty()) {
        size_t i = 0;
        for (const auto& p : store.all()) p->value = best_params[i++];
    }
    return log;
}

} // namespace solargeco
