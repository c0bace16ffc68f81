#include "seqmem/commands.hpp"

#include <CLI11.hpp>

#include <iostream>

int main(int argc, char** argv) {
  CLI::App app{"Linear autoencoders and memory networks for sequential MNIST"};
  app.require_subcommand(1);

  std::string config_path;
  std::string init_from;
  std::string checkpoint;
  std::string out_dir;
  std::uint64_t seed = 0;
  long long epochs = -1;
  long long sample = -1;
  std::vector<std::string> overrides;

  const char* names[] = {"fit-laes", "train", "eval", "probe-grad", "probe-reco", "reconstruct"};
  for (const char* name : names) {
    auto* sub = app.add_subcommand(name);
    sub->add_option("--config", config_path, "key=value experiment file")->required()->check(CLI::ExistingFile);
    sub->add_option("--init-from", init_from, "checkpoint to start from");
    sub->add_option("--checkpoint", checkpoint, "checkpoint to evaluate or probe");
    sub->add_option("--out", out_dir, "output directory (overrides output_dir)");
    sub->add_option("--seed", seed, "training seed (overrides seed)");
    sub->add_option("--epochs", epochs, "epoch count (overrides epochs)");
    sub->add_option("--sample", sample, "test-set index for reconstruct");
    sub->add_option("--set", overrides, "extra key=value assignments");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : seqmem::kExitConfig;
  }

  const std::string command = app.get_subcommands().front()->get_name();
  seqmem::CommandOptions opts;
  try {
    opts.config = seqmem::load_config(config_path);
    for (const auto& o : overrides) seqmem::apply_assignment(opts.config, o);
    auto* sub = app.get_subcommands().front();
    if (sub->count("--seed")) opts.config.train.seed = seed;
    if (sub->count("--epochs")) seqmem::apply_setting(opts.config, "epochs", std::to_string(epochs));
    if (sub->count("--sample")) seqmem::apply_setting(opts.config, "sample", std::to_string(sample));
    if (!out_dir.empty()) opts.config.output_dir = out_dir;
    if (!init_from.empty()) opts.init_from = init_from;
    if (!checkpoint.empty()) opts.checkpoint = checkpoint;
    for (const auto& p : {opts.init_from, opts.checkpoint})
      if (p && !std::filesystem::exists(*p)) throw seqmem::ConfigError("--checkpoint", "file not found: " + p->string());
    seqmem::finalize_config(opts.config);
  } catch (const seqmem::ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return seqmem::kExitConfig;
  }
  return seqmem::run_command(command, opts, std::cout, std::cerr);
}
