#include "spfde/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <iomanip>
#include <numeric>
#include <optional>
#include <sstream>
#include <unordered_map>

#include "json.hpp"
#include "spfde/analysis.hpp"
#include "spfde/data.hpp"
#include "spfde/errors.hpp"

namespace spfde {

namespace fs = std::filesystem;
using nlohmann::json;

DstSchedule make_schedule(const RunConfig& cfg) {
  return DstSchedule::make(cfg.update_interval, cfg.search_end,
                           cfg.grow_phases, cfg.sparsity);
}

std::string config_to_json(const RunConfig& cfg) {
  json j;
  j["epochs"] = cfg.epochs;
  j["seed"] = cfg.seed;
  j["batch_size"] = cfg.batch_size;
  j["checkpoint_every"] = cfg.checkpoint_every;
  j["precision"] = to_string(cfg.precision);
  j["warmup_epochs"] = cfg.warmup_epochs;
  j["dataset_kind"] = cfg.dataset_kind;
  j["train_spec"] = cfg.train_spec();
  j["test_spec"] = cfg.test_spec();
  j["augment"] = cfg.augment;
  j["normalize"] = cfg.normalize;
  j["arch"] = cfg.arch;
  j["blocks"] = cfg.blocks;
  j["dense_last"] = cfg.dense_last;
  j["sparsity"] = cfg.sparsity;
  j["update_interval"] = cfg.update_interval;
  j["search_end"] = cfg.search_end;
  json phases = json::array();
  for (auto [e, d] : cfg.grow_phases) phases.push_back({{"epoch", e}, {"delta", d}});
  j["grow_phases"] = phases;
  j["freeze_scheme"] = to_string(cfg.scheme);
  j["target_reduction"] = cfg.target_reduction ? json(*cfg.target_reduction) : json();
  j["freeze_start_epoch"] = cfg.start_epoch ? json(*cfg.start_epoch) : json();
  j["frozen_layer_fraction"] = cfg.frozen_layer_fraction;
  j["sieve_p"] = cfg.sieve_p;
  j["sieve_update_ratio"] = cfg.sieve_update_ratio;
  j["lr0"] = cfg.lr0;
  j["lr_end"] = cfg.lr_end;
  j["momentum"] = cfg.momentum;
  j["weight_decay"] = cfg.weight_decay;
  return j.dump();
}

namespace {

double prefix_savings(const std::vector<std::size_t>& block_layer_counts,
                      int t_frz, int total_epochs, int interval,
                      const CostModel& acct, double fraction) {
  std::size_t total_layers = 0;
  for (std::size_t c : block_layer_counts) total_layers += c;
  const std::size_t budget_layers = static_cast<std::size_t>(
      std::floor(fraction * static_cast<double>(total_layers)));
  std::size_t prefix = 0, covered = 0;
  while (prefix + 1 < block_layer_counts.size() &&
         covered + block_layer_counts[prefix] <= budget_layers) {
    covered += block_layer_counts[prefix];
    ++prefix;
  }
  double saved = 0.0;
  for (std::size_t i = 0; i < prefix; ++i) {
    const int fe = t_frz + interval * static_cast<int>(i);
    for (int e = fe; e < total_epochs; ++e)
      saved += acct.block_bwd_flops(i, e);
  }
  return saved;
}

FreezePlan empty_plan(const RunConfig& cfg, std::size_t num_blocks,
                      const CostModel& acct) {
  FreezePlan plan;
  plan.scheme = cfg.scheme;
  plan.total_epochs = cfg.epochs;
  plan.start_epoch = cfg.epochs;
  plan.interval = cfg.update_interval;
  plan.num_blocks = num_blocks;
  double baseline = 0.0;
  for (int e = 0; e < cfg.epochs; ++e)
    baseline += acct.epoch_flops_unfrozen(e);
  plan.baseline_total_flops = baseline;
  plan.predicted_total_flops = baseline;
  return plan;
}

void sgd_step(MaskedLayer& layer, double lr, double momentum, double wd) {
  // Masked coordinates hold zero weight, zero grad (post mask_gradient) and
  // zero momentum, so the dense update keeps them exactly zero.
  if (layer.weights->data.precision() == Precision::F32) {
    auto w = layer.weights->data.data<float>();
    auto g = layer.weights->grad().data<float>();
    auto m = layer.w_momentum.data<float>();
    const float flr = static_cast<float>(lr);
    const float fmu = static_cast<float>(momentum);
    const float fwd_ = static_cast<float>(wd);
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = fmu * m[i] + g[i];
      w[i] -= flr * m[i];
      w[i] -= flr * fwd_ * w[i];
    }
    auto b = layer.bias->data.data<float>();
    auto gb = layer.bias->grad().data<float>();
    auto mb = layer.b_momentum.data<float>();
    for (std::size_t i = 0; i < b.size(); ++i) {
      mb[i] = fmu * mb[i] + gb[i];
      b[i] -= flr * mb[i];
    }
  } else {
    auto w = layer.weights->data.data<double>();
    auto g = layer.weights->grad().data<double>();
    auto m = layer.w_momentum.data<double>();
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = momentum * m[i] + g[i];
      w[i] -= lr * m[i];
      w[i] -= lr * wd * w[i];
    }
    auto b = layer.bias->data.data<double>();
    auto gb = layer.bias->grad().data<double>();
    auto mb = layer.b_momentum.data<double>();
    for (std::size_t i = 0; i < b.size(); ++i) {
      mb[i] = momentum * mb[i] + gb[i];
      b[i] -= lr * mb[i];
    }
  }
}

double evaluate(const SparseNetwork& net, const Dataset& ds,
                std::size_t batch_size) {
  if (ds.size() == 0) return 0.0;
  std::vector<std::uint32_t> all(ds.size());
  std::iota(all.begin(), all.end(), 0u);
  BatchStream stream(ds, all, batch_size, /*epoch_seed=*/0,
                     /*augment=*/false, /*normalize=*/true);
  std::size_t correct = 0;
  while (auto batch = stream.next()) {
    Tensor logits = net.forward(batch->images);
    const std::size_t classes = logits.dim(1);
    for (std::size_t i = 0; i < batch->labels.size(); ++i) {
      std::size_t best = 0;
      double best_v = logits.at(i * classes);
      for (std::size_t c = 1; c < classes; ++c) {
        const double v = logits.at(i * classes + c);
        if (v > best_v) {
          best_v = v;
          best = c;
        }
      }
      correct += best == static_cast<std::size_t>(batch->labels[i]) ? 1 : 0;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(ds.size());
}

void verify_frozen_digests(
    const SparseNetwork& net,
    const std::unordered_map<std::string, std::string>& digests) {
  for (const MaskedLayer& layer : net.layers()) {
    if (!layer.frozen) continue;
    auto it = digests.find(layer.name);
    if (it == digests.end()) continue;
    if (layer_digest(layer) != it->second) {
      throw InternalError("frozen layer '" + layer.name +
                          "' changed after freezing");
    }
  }
}

}  // namespace

FreezePlan plan_freezing(const RunConfig& cfg, const SparseNetwork& net,
                         const CostModel& acct) {
  const std::size_t num_blocks = net.blocks().size();
  if (!cfg.freezing_enabled()) return empty_plan(cfg, num_blocks, acct);

  const bool periodic_family = cfg.scheme == FreezeScheme::periodic ||
                               cfg.scheme == FreezeScheme::delayed_periodic;
  if (periodic_family) {
    if (cfg.scheme == FreezeScheme::delayed_periodic && !cfg.start_epoch) {
      throw ConfigError(
          "freeze: delayed_periodic needs an explicit freeze.start_epoch");
    }
    const int start = cfg.start_epoch ? *cfg.start_epoch : 0;
    return make_periodic_plan(num_blocks, cfg.epochs, cfg.update_interval,
                              cfg.scheme == FreezeScheme::delayed_periodic,
                              start, acct);
  }

  const auto block_counts = net.block_sizes();
  int t_frz;
  double target_flops;
  double baseline = 0.0;
  for (int e = 0; e < cfg.epochs; ++e)
    baseline += acct.epoch_flops_unfrozen(e);

  if (cfg.target_reduction) {
    t_frz = solve_start_epoch(block_counts, *cfg.target_reduction, cfg.epochs,
                              cfg.update_interval, acct,
                              cfg.frozen_layer_fraction);
    if (t_frz >= cfg.epochs) return empty_plan(cfg, num_blocks, acct);
    target_flops = baseline * (1.0 - *cfg.target_reduction);
  } else {
    t_frz = *cfg.start_epoch;
    // Freeze the configured layer-fraction prefix at this start epoch.
    target_flops =
        baseline - prefix_savings(block_counts, t_frz, cfg.epochs,
                                  cfg.update_interval, acct,
                                  cfg.frozen_layer_fraction);
  }

  FreezePlan plan = generate_freeze_config(target_flops, cfg.epochs, t_frz,
                                           cfg.update_interval, acct);
  if (cfg.scheme == FreezeScheme::single_shot_resume)
    apply_resume(plan, acct);
  return plan;
}

BudgetResult run_budget(const RunConfig& cfg) {
  const ModelDesc desc = ModelDesc::parse(cfg.arch);
  SparseNetwork net = SparseNetwork::build(desc, cfg.sparsity, cfg.precision,
                                           cfg.dense_last, cfg.blocks);
  const DstSchedule sched = make_schedule(cfg);
  const std::size_t n = dataset_spec_size(cfg.train_spec());
  const std::size_t removed = static_cast<std::size_t>(
      std::llround(cfg.sieve_p * static_cast<double>(n)));
  ScheduleCostModel acct(net, sched, n - removed);

  BudgetResult res;
  res.samples_per_epoch = n - removed;
  res.plan = plan_freezing(cfg, net, acct);
  res.baseline_flops = res.plan.baseline_total_flops;
  res.replayed_flops = simulate_plan_flops(res.plan, acct);
  double cumulative = res.plan.baseline_total_flops;
  for (const PlannedFreeze& f : res.plan.freezes) {
    cumulative -= f.saved_flops;
    res.rows.push_back({f.block, f.epoch,
                        acct.block_bwd_flops(f.block, f.epoch), f.saved_flops,
                        cumulative});
  }
  return res;
}

TrainResult run_train(const RunConfig& cfg, const std::string& out_dir) {
  fs::create_directories(out_dir);

  Dataset train = load_dataset_spec(cfg.train_spec());
  if (!cfg.normalize) train.identity_normalization();
  std::optional<Dataset> test;
  if (!cfg.test_spec().empty()) {
    test = load_dataset_spec(cfg.test_spec());
    // Evaluation uses the training statistics.
    test->channel_mean = train.channel_mean;
    test->channel_std = train.channel_std;
  }

  const ModelDesc desc = ModelDesc::parse(cfg.arch);
  SparseNetwork net =
      SparseNetwork::init_random_sparse(desc, cfg.sparsity, cfg.seed,
                                        cfg.precision, cfg.dense_last,
                                        cfg.blocks);
  const DstSchedule sched = make_schedule(cfg);
  SieveState sieve =
      SieveState::init(train.size(), cfg.sieve_p, cfg.seed,
                       cfg.sieve_update_ratio, cfg.sieve_shuffle);
  const std::size_t partial_size = sieve.partial_set().size();
  ScheduleCostModel acct(net, sched, partial_size);
  FreezePlan plan = plan_freezing(cfg, net, acct);
  Rng run_rng = Rng::derive(cfg.seed, 0x7EA1);

  MetricsWriter writer(out_dir + "/metrics.jsonl");
  writer.write_config_echo(config_to_json(cfg));

  std::vector<LayerShape> shapes;
  for (const MaskedLayer& l : net.layers()) shapes.push_back(LayerShape::of(l));
  double dense_per_sample = 0.0;
  for (const LayerShape& s : shapes)
    dense_per_sample += 3.0 * layer_fwd_flops(s, 0.0, 1);

  const std::size_t num_blocks = net.blocks().size();
  std::unordered_map<std::string, std::string> digests;
  FlopsReport fr;
  double cum_flops = 0.0;
  std::uint64_t mem_min = UINT64_MAX;
  double mem_sum = 0.0;
  std::uint64_t mem_baseline = 0;
  double final_train_acc = 0.0, final_eval_acc = 0.0;
  std::string last_ckpt;

  std::vector<std::uint32_t> sample_order;
  std::vector<std::uint8_t> sample_correct;
  std::vector<double> epoch_seconds;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto epoch_start = std::chrono::steady_clock::now();
    std::size_t swaps = 0;
    if (epoch % cfg.update_interval == 0) {
      auto newly = freeze_step(net, epoch, plan);
      for (std::size_t b : newly) {
        for (std::size_t li : net.blocks()[b].layers) {
          const MaskedLayer& l = net.layers()[li];
          digests[l.name] = layer_digest(l);
        }
      }
      auto active_now = [&](std::size_t b) { return plan.is_active(b, epoch); };
      structure_update(net, epoch, sched, run_rng, active_now);
      if (sieve.enabled() && epoch > 0 && epoch <= sched.search_end) {
        SieveReport rep = sieve.update(run_rng, epoch);
        writer.write(rep);
        swaps = rep.swapped;
      }
      verify_frozen_digests(net, digests);
      net.check_frozen_prefix();
    }

    auto active = [&](std::size_t b) { return plan.is_active(b, epoch); };
    if (epoch == 0) {
      mem_baseline = memory_snapshot(net, nullptr, cfg.batch_size).total();
    }

    const double warm =
        (cfg.warmup_epochs > 0 && epoch < cfg.warmup_epochs)
            ? static_cast<double>(epoch + 1) / cfg.warmup_epochs
            : 1.0;
    std::vector<double> lrs(num_blocks, 0.0);
    for (std::size_t b = 0; b < num_blocks; ++b) {
      if (active(b))
        lrs[b] = warm * block_lr(epoch, b, plan, cfg.lr0, cfg.lr_end);
    }
    std::size_t first_active = 0;
    while (first_active < num_blocks && !active(first_active)) ++first_active;
    if (first_active == num_blocks)
      throw InternalError("trainer: no active blocks at epoch " +
                          std::to_string(epoch));

    BatchStream stream(train, sieve.partial_set(), cfg.batch_size,
                       mix_seed(cfg.seed, 0xBA7C000ull + epoch), cfg.augment,
                       /*normalize=*/true);
    sample_order.clear();
    sample_correct.clear();
    double loss_sum = 0.0;
    std::size_t correct_n = 0, total_n = 0;

    while (auto batch = stream.next()) {
      for (std::size_t li = 0; li < net.layers().size(); ++li) {
        MaskedLayer& layer = net.layers()[li];
        if (layer.frozen || !active(net.block_of_layer(li))) continue;
        layer.weights->zero_grad();
        layer.bias->zero_grad();
      }
      TrainForward tf =
          net.train_forward(batch->images, batch->labels, first_active);
      tf.tape.backward(tf.loss);

      for (std::size_t li = 0; li < net.layers().size(); ++li) {
        MaskedLayer& layer = net.layers()[li];
        const std::size_t b = net.block_of_layer(li);
        if (layer.frozen || !active(b)) continue;
        mask_gradient(layer);
        sgd_step(layer, lrs[b], cfg.momentum, cfg.weight_decay);
        apply_mask(layer);
      }

      const double batch_loss = tf.loss->data.at(0);
      if (!std::isfinite(batch_loss))
        throw InternalError("trainer: non-finite loss at epoch " +
                            std::to_string(epoch));
      loss_sum += batch_loss * static_cast<double>(batch->labels.size());

      const Tensor& logits = tf.logits->data;
      const std::size_t classes = logits.dim(1);
      for (std::size_t i = 0; i < batch->labels.size(); ++i) {
        std::size_t best = 0;
        double best_v = logits.at(i * classes);
        for (std::size_t c = 1; c < classes; ++c) {
          const double v = logits.at(i * classes + c);
          if (v > best_v) {
            best_v = v;
            best = c;
          }
        }
        const bool ok = best == static_cast<std::size_t>(batch->labels[i]);
        correct_n += ok ? 1 : 0;
        sample_order.push_back(batch->indices[i]);
        sample_correct.push_back(ok ? 1 : 0);
      }
      total_n += batch->labels.size();
    }

    sieve.record_epoch(sample_order, sample_correct);
    epoch_seconds.push_back(std::chrono::duration<double>(
                                std::chrono::steady_clock::now() - epoch_start)
                                .count());

    const double train_loss = loss_sum / static_cast<double>(total_n);
    const double train_acc =
        static_cast<double>(correct_n) / static_cast<double>(total_n);
    const double eval_acc =
        test ? evaluate(net, *test, cfg.batch_size) : 0.0;
    final_train_acc = train_acc;
    final_eval_acc = eval_acc;

    const double ef = epoch_flops(net, active, partial_size);
    cum_flops += ef;

    double sparse_full_ps = 0.0;
    for (std::size_t li = 0; li < shapes.size(); ++li)
      sparse_full_ps +=
          3.0 * layer_fwd_flops(shapes[li], net.layers()[li].sparsity(), 1);
    const double n_full = static_cast<double>(train.size());
    const double dense_e = dense_per_sample * n_full;
    const double sparse_full_e = sparse_full_ps * n_full;
    const double sparse_partial_e =
        sparse_full_ps * static_cast<double>(partial_size);
    fr.dense_baseline += dense_e;
    fr.sparse_baseline += sparse_full_e;
    fr.actual += ef;
    fr.saved_sparsity += dense_e - sparse_full_e;
    fr.saved_sieving += sparse_full_e - sparse_partial_e;
    fr.saved_freezing += sparse_partial_e - ef;

    const std::uint64_t mem =
        memory_snapshot(net, active, cfg.batch_size).total();
    mem_min = std::min(mem_min, mem);
    mem_sum += static_cast<double>(mem);

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = train_loss;
    rec.train_acc = train_acc;
    rec.eval_acc = eval_acc;
    rec.lr_per_block = lrs;
    rec.epoch_flops = ef;
    rec.cum_flops = cum_flops;
    rec.mem_bytes = mem;
    rec.frozen_blocks = plan.inactive_count_at(epoch);
    rec.sieve_swaps = swaps;
    for (const MaskedLayer& l : net.layers()) {
      rec.sparsity_per_layer.push_back(l.sparsity());
      rec.nnz_per_layer.push_back(l.nnz());
    }
    writer.write(rec);

    const bool last_epoch = epoch + 1 == cfg.epochs;
    if ((cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0) ||
        last_epoch) {
      CheckpointMeta meta;
      meta.epoch = static_cast<std::uint64_t>(epoch + 1);
      meta.rng_state = run_rng.serialize();
      meta.dataset_spec = cfg.train_spec();
      meta.eval_spec = cfg.test_spec();
      std::ostringstream name;
      name << "ckpt_epoch" << std::setw(4) << std::setfill('0') << (epoch + 1)
           << ".spfd";
      const std::string path = out_dir + "/" + name.str();
      save_checkpoint(net, meta, path);
      last_ckpt = path;
    }
  }

  verify_frozen_digests(net, digests);

  // Stable name for the final model next to the per-epoch files.
  const std::string final_path = out_dir + "/ckpt_final.spfd";
  fs::copy_file(last_ckpt, final_path, fs::copy_options::overwrite_existing);

  SummaryRecord sum;
  sum.flops = fr;
  sum.mem_min_bytes = mem_min == UINT64_MAX ? 0 : mem_min;
  sum.mem_avg_bytes = cfg.epochs > 0 ? mem_sum / cfg.epochs : 0.0;
  sum.mem_baseline_bytes = mem_baseline;
  sum.final_train_acc = final_train_acc;
  sum.final_eval_acc = final_eval_acc;
  sum.epochs = cfg.epochs;
  writer.write(sum);

  TrainResult result;
  result.metrics_path = out_dir + "/metrics.jsonl";
  result.final_checkpoint = final_path;
  result.summary = sum;
  result.epoch_seconds = std::move(epoch_seconds);
  return result;
}

ReportResult run_report(const std::string& metrics_path) {
  MetricsLog log = MetricsLog::read(metrics_path);
  ReportResult res;
  if (log.summary) {
    res.summary = *log.summary;
    res.has_summary = true;
  } else {
    res.summary.epochs = static_cast<int>(log.epochs.size());
    if (!log.epochs.empty()) {
      res.summary.flops.actual = log.epochs.back().cum_flops;
      res.summary.final_eval_acc = log.epochs.back().eval_acc;
      res.summary.final_train_acc = log.epochs.back().train_acc;
    }
  }

  std::ostringstream csv;
  const std::size_t lr_cols =
      log.epochs.empty() ? 0 : log.epochs.front().lr_per_block.size();
  csv << "epoch,train_loss,train_acc,eval_acc,epoch_flops,cum_flops,mem_bytes,"
         "frozen_blocks,sieve_swaps,mean_sparsity";
  for (std::size_t b = 0; b < lr_cols; ++b) csv << ",lr_b" << b;
  csv << "\n";
  for (const EpochRecord& r : log.epochs) {
    double mean_sp = 0.0;
    for (double s : r.sparsity_per_layer) mean_sp += s;
    if (!r.sparsity_per_layer.empty()) mean_sp /= r.sparsity_per_layer.size();
    csv << r.epoch << "," << r.train_loss << "," << r.train_acc << ","
        << r.eval_acc << "," << r.epoch_flops << "," << r.cum_flops << ","
        << r.mem_bytes << "," << r.frozen_blocks << "," << r.sieve_swaps << ","
        << mean_sp;
    for (std::size_t b = 0; b < lr_cols; ++b)
      csv << "," << (b < r.lr_per_block.size() ? r.lr_per_block[b] : 0.0);
    csv << "\n";
  }
  res.csv = csv.str();
  return res;
}

}  // namespace spfde
