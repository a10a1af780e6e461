// sodawide: train, infer, eval, gradcheck, inspect, synth.
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "sodawide/app/commands.hpp"

using namespace sodawide;
using namespace sodawide::app;

namespace {

void add_network_flags(CLI::App* cmd, TrainFlags& t) {
  cmd->add_option("--resolution", t.resolution, "Input resolution (multiple of 16)");
  cmd->add_option("--variant", t.variant, "Network variant")->check(CLI::IsMember({"full", "small"}));
  cmd->add_flag("--no-msa", t.no_msa, "Drop the multi-scale attention branch");
  cmd->add_flag("--no-mrffam", t.no_mrffam, "Drop the encoder MRFFAM branch");
  cmd->add_flag("--no-decoder-mrffam", t.no_decoder_mrffam, "Drop MRFFAM from the decoder blocks");
  cmd->add_flag("--no-lpm", t.no_lpm, "Drop the local processing branch");
  cmd->add_flag("--no-contours", t.no_contours, "Drop the contour head and its loss");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"SODAWideNet salient object detection toolkit"};
  app.require_subcommand(1);
  app.fallthrough();

  GlobalFlags g;
  app.add_option("--config", g.config, "JSON run config");
  app.add_option("--seed", g.seed, "Random seed");
  app.add_flag("--deterministic", g.deterministic, "Deterministic mode");
  app.add_option("--out", g.out, "Output directory");
  app.add_option("--log", g.log, "JSON-lines log path");

  TrainFlags t;
  auto* train = app.add_subcommand("train", "Train on a manifest");
  train->add_option("--manifest", t.manifest, "Training manifest (JSON)");
  train->add_option("--lr", t.lr, "Initial learning rate");
  train->add_option("--epochs", t.epochs, "Number of epochs");
  train->add_option("--lr-drop-epoch", t.lr_drop_epoch, "Epochs before the learning-rate drop");
  train->add_option("--lr-drop-factor", t.lr_drop_factor, "Learning-rate multiplier after the drop");
  train->add_option("--batch", t.batch, "Batch size");
  train->add_option("--alpha-window", t.alpha_window, "Alpha-map window (odd)");
  train->add_option("--max-steps", t.max_steps, "Stop after this many optimizer steps");
  add_network_flags(train, t);

  std::string checkpoint, manifest, pred_dir;
  std::optional<std::size_t> infer_res;
  auto* infer = app.add_subcommand("infer", "Write saliency maps for a manifest");
  infer->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
  infer->add_option("--manifest", manifest, "Manifest (JSON)")->required();
  infer->add_option("--resolution", infer_res, "Expected network resolution");

  MetricOptions mopt;
  std::string e_mode = "max";
  auto* eval = app.add_subcommand("eval", "Score saliency maps against a manifest");
  eval->add_option("--pred", pred_dir, "Directory of <stem>.pgm predictions")->required();
  eval->add_option("--manifest", manifest, "Ground-truth manifest (JSON)")->required();
  eval->add_option("--beta-squared", mopt.beta_squared, "F-measure beta^2")->capture_default_str();
  eval->add_option("--e-measure", e_mode, "E-measure mode")->check(CLI::IsMember({"max", "adaptive"}));
  eval->add_flag("--per-image-f", mopt.per_image_f, "Average per-image F_max instead of pooled PR");

  std::string scope = "all";
  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference gradient audit");
  gradcheck->add_option("--scope", scope, "Audit scope")
      ->check(CLI::IsMember({"all", "primitives", "blocks", "losses", "end-to-end"}));

  auto* inspect = app.add_subcommand("inspect", "Print architecture, shapes and parameter totals");
  add_network_flags(inspect, t);

  std::size_t synth_count = 16, synth_res = 96;
  auto* synth = app.add_subcommand("synth", "Generate a synthetic dataset");
  synth->add_option("--count", synth_count, "Number of samples")->capture_default_str();
  synth->add_option("--resolution", synth_res, "Image size")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  return run_guarded([&]() -> int {
    if (*train) return cmd_train(resolve_config(g, t), std::cout);
    if (*infer) {
      cmd_infer(checkpoint, manifest, g.out.value_or("predictions"), infer_res, std::cout);
      return kOk;
    }
    if (*eval) {
      mopt.e_mode = e_mode == "max" ? EMeasureMode::max : EMeasureMode::adaptive;
      cmd_eval(pred_dir, manifest, mopt, g.out.value_or("."), std::cout);
      return kOk;
    }
    if (*gradcheck) return cmd_gradcheck(parse_scopes(scope), g.seed.value_or(0), std::cout);
    if (*inspect) {
      cmd_inspect(resolve_config(g, t).network, std::cout);
      return kOk;
    }
    if (*synth) {
      cmd_synth(g.out.value_or("synth"), g.seed.value_or(0), synth_count, synth_res, std::cout);
      return kOk;
    }
    return kUsage;
  });
}
