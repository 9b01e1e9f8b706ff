// lsteer: calibration and inference over pre-extracted attention-head
// feature banks. Subcommands wire the pipeline end to end:
//
//   synth      generate a planted synthetic bank
//   rsa        score and rank heads, select the expert set
//   train      calibrate the controller and scorer on a labeled bank
//   infer      produce per-video anomaly curves from a checkpoint
//   eval       frame-level AUC / AP over inferred curves
//   sweep      re-run the pipeline across one axis (data_ratio, class_ratio,
//              k_experts, lambda_reg)
//   stability  expert-selection overlap across reseeded subsamples
//   plot       render a curve CSV as SVG
//
// One JSON config (--config) feeds every command; explicit flags override
// it. Exit codes: 0 success, 2 usage/config error, 1 runtime error.

#include <CLI11.hpp>

#include "lsteer/cli.hpp"

namespace {

// --config is honored before the regular parse so later flags override it.
lsteer::RunConfig preload_config(int argc, char** argv) {
  for (int i = 1; i < argc; ++i) {
    const std::string_view arg(argv[i]);
    if (arg == "--config" && i + 1 < argc) return lsteer::load_run_config(argv[i + 1]);
    if (arg.starts_with("--config="))
      return lsteer::load_run_config(std::string(arg.substr(9)));
  }
  return lsteer::RunConfig{};
}

void add_common_flags(CLI::App* cmd, lsteer::RunConfig& cfg, std::string& config_path) {
  cmd->add_option("--config", config_path, "JSON run config (flags override it)");
  cmd->add_option("--seed", cfg.seed, "master seed");
}

void add_rsa_flags(CLI::App* cmd, lsteer::RunConfig& cfg, std::string& metric) {
  cmd->add_option("--k", cfg.rsa.config.k, "experts to select");
  cmd->add_option("--epsilon", cfg.rsa.config.epsilon, "score stability constant");
  cmd->add_option("--metric", metric, "rsa | silhouette | knn_purity");
  cmd->add_option("--knn-k", cfg.rsa.config.knn_k, "neighbor count for knn_purity");
  cmd->add_flag("--balance,!--no-balance", cfg.rsa.balance,
                "undersample to the balance ratio before scoring");
  cmd->add_option("--balance-ratio", cfg.rsa.balance_ratio, "normal fraction after balancing");
}

}  // namespace

int main(int argc, char** argv) {
  lsteer::RunConfig cfg;
  try {
    cfg = preload_config(argc, argv);
  } catch (const lsteer::usage_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }

  CLI::App app{"latent steering anomaly pipeline over feature banks"};
  app.require_subcommand(1);
  std::string config_path;  // consumed by preload; registered so parsing accepts it

  std::string out_path, bank_path, eval_bank_path, report_path, ckpt_path, curves_path;
  std::string format = "binary", metric, variant, reduction, axis;
  std::vector<double> sweep_values;

  CLI::App* synth = app.add_subcommand("synth", "generate a planted synthetic bank");
  add_common_flags(synth, cfg, config_path);
  synth->add_option("--out", out_path, "output bank stem")->required();
  synth->add_option("--format", format, "binary | json");
  synth->add_option("--n-normal", cfg.synth.n_normal, "normal segment count");
  synth->add_option("--n-anomalous", cfg.synth.n_anomalous, "anomalous segment count");
  synth->add_option("--planted", cfg.synth.planted, "planted discriminative head count");
  synth->add_option("--delta", cfg.synth.delta, "planted centroid displacement");
  synth->add_option("--noise-sigma", cfg.synth.noise_sigma, "per-dimension noise std");
  synth->add_option("--context-signal", cfg.synth.context_signal,
                    "label-aligned context magnitude");
  synth->add_option("--components", cfg.synth.n_components_per_class,
                    "mixture components per class");
  synth->add_option("--segments-per-video", cfg.synth.segments_per_video,
                    "segments grouped into each video");
  synth->add_option("--d-model", cfg.meta.d_model, "context width");
  synth->add_option("--d-head", cfg.meta.d_head, "head feature width");
  synth->add_option("--n-layers", cfg.meta.n_layers, "layer count");
  synth->add_option("--n-heads", cfg.meta.n_heads_per_layer, "heads per layer");

  CLI::App* rsa = app.add_subcommand("rsa", "rank heads and select experts");
  add_common_flags(rsa, cfg, config_path);
  rsa->add_option("--bank", bank_path, "input bank")->required();
  rsa->add_option("--out", out_path, "report JSON path")->required();
  add_rsa_flags(rsa, cfg, metric);

  CLI::App* train = app.add_subcommand("train", "calibrate controller and scorer");
  add_common_flags(train, cfg, config_path);
  train->add_option("--bank", bank_path, "labeled calibration bank")->required();
  train->add_option("--report", report_path, "selection report JSON")->required();
  train->add_option("--out", out_path, "checkpoint path")->required();
  train->add_option("--variant", variant,
                    "full | no_gsg | additive | static_scaling | linear_probe");
  train->add_option("--epochs", cfg.train.epochs, "training epochs");
  train->add_option("--batch-size", cfg.train.batch_size, "mini-batch size");
  train->add_option("--lr", cfg.train.learning_rate, "learning rate");
  train->add_option("--lambda-reg", cfg.train.lambda_reg, "gate penalty weight");
  train->add_option("--reduction", reduction, "mean | sum");
  train->add_option("--d-hidden", cfg.hmc.d_hidden, "gate hidden width");
  train->add_option("--rank", cfg.hmc.r, "adapter rank");
  train->add_flag("--balance,!--no-balance", cfg.rsa.balance,
                  "undersample to the balance ratio before training");

  CLI::App* infer = app.add_subcommand("infer", "score a bank with a checkpoint");
  add_common_flags(infer, cfg, config_path);
  infer->add_option("--bank", bank_path, "input bank (labels optional)")->required();
  infer->add_option("--checkpoint", ckpt_path, "trained checkpoint")->required();
  infer->add_option("--out", out_path, "output directory")->required();
  infer->add_option("--sigma-g", cfg.infer.sigma_g, "smoothing std in frames");
  infer->add_option("--tau", cfg.infer.tau_anomaly, "flagging threshold");
  infer->add_option("--radius-sigmas", cfg.infer.kernel_radius_sigmas,
                    "kernel truncation radius in sigmas");

  CLI::App* eval = app.add_subcommand("eval", "frame-level metrics over curves");
  add_common_flags(eval, cfg, config_path);
  eval->add_option("--curves", curves_path, "infer output directory")->required();
  eval->add_option("--out", out_path, "eval report JSON path")->required();

  CLI::App* sweep = app.add_subcommand("sweep", "pipeline metrics across one axis");
  add_common_flags(sweep, cfg, config_path);
  sweep->add_option("--bank", bank_path, "labeled calibration bank")->required();
  sweep->add_option("--eval-bank", eval_bank_path, "held-out labeled bank")->required();
  sweep->add_option("--axis", axis, "data_ratio | class_ratio | k_experts | lambda_reg");
  sweep->add_option("--values", sweep_values, "axis values")->delimiter(',');
  sweep->add_option("--out", out_path, "sweep CSV path")->required();
  sweep->add_option("--epochs", cfg.train.epochs, "training epochs per row");
  add_rsa_flags(sweep, cfg, metric);

  CLI::App* stability = app.add_subcommand("stability", "selection overlap across seeds");
  add_common_flags(stability, cfg, config_path);
  stability->add_option("--bank", bank_path, "labeled bank")->required();
  stability->add_option("--out", out_path, "stability JSON path")->required();
  stability->add_option("--n-seeds", cfg.stability.n_seeds, "independent runs");
  stability->add_option("--fraction", cfg.stability.subsample_fraction,
                        "per-run video subsample fraction");
  stability->add_option("--top-n", cfg.stability.top_n, "ranking depth for Jaccard");
  add_rsa_flags(stability, cfg, metric);

  CLI::App* plot = app.add_subcommand("plot", "render a curve CSV as SVG");
  add_common_flags(plot, cfg, config_path);
  plot->add_option("--curve", curves_path, "curve CSV from infer")->required();
  plot->add_option("--out", out_path, "SVG path")->required();
  plot->add_option("--tau", cfg.infer.tau_anomaly, "threshold rule height");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    app.exit(e);
    return 2;
  }

  try {
    if (!metric.empty()) cfg.rsa.config.metric = lsteer::selection_metric_from_string(metric);
    if (!variant.empty()) cfg.hmc.variant = lsteer::hmc_variant_from_string(variant);
    if (!reduction.empty())
      cfg.train.loss_reduction = lsteer::loss_reduction_from_string(reduction);
    if (!axis.empty()) cfg.sweep.axis = axis;
    if (!sweep_values.empty()) cfg.sweep.values = sweep_values;

    if (synth->parsed()) {
      lsteer::BankFormat fmt;
      if (format == "binary")
        fmt = lsteer::BankFormat::binary;
      else if (format == "json")
        fmt = lsteer::BankFormat::json;
      else
        throw lsteer::usage_error("unknown format '" + format + "'");
      lsteer::cmd_synth(cfg, out_path, fmt);
    } else if (rsa->parsed()) {
      lsteer::cmd_rsa(cfg, bank_path, out_path);
    } else if (train->parsed()) {
      lsteer::cmd_train(cfg, bank_path, report_path, out_path);
    } else if (infer->parsed()) {
      lsteer::cmd_infer(cfg, bank_path, ckpt_path, out_path);
    } else if (eval->parsed()) {
      lsteer::cmd_eval(cfg, curves_path, out_path);
    } else if (sweep->parsed()) {
      lsteer::cmd_sweep(cfg, bank_path, eval_bank_path, out_path);
    } else if (stability->parsed()) {
      lsteer::cmd_stability(cfg, bank_path, out_path);
    } else if (plot->parsed()) {
      lsteer::cmd_plot(cfg, curves_path, out_path);
    }
  } catch (const lsteer::usage_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
