#pragma once

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "tmag/cnn.hpp"
#include "tmag/config.hpp"
#include "tmag/engine.hpp"
#include "tmag/error.hpp"
#include "tmag/io.hpp"
#include "tmag/pipeline.hpp"
#include "tmag/rng.hpp"
#include "tmag/synth.hpp"

namespace tmag {

namespace detail {

/// Config file plus the flag overrides shared by the subcommands that build sessions.
struct ConfigFlags {
  std::string path;
  std::optional<std::uint64_t> seed;
  std::optional<double> snr_db;
  std::optional<std::size_t> epochs;
  std::optional<double> multiplier;
  std::optional<std::string> carrier;

  void attach(CLI::App& app, bool training_flags) {
    app.add_option("--config", path, "JSON session config")->check(CLI::ExistingFile);
    app.add_option("--seed", seed, "Override the config seed");
    app.add_option("--threshold-multiplier", multiplier, "Override the threshold multiplier");
    if (training_flags) {
      app.add_option("--snr-db", snr_db, "Override the synthetic SNR");
      app.add_option("--epochs", epochs, "Override the training epochs");
      app.add_option("--carrier", carrier, "Synthetic carrier")->check(CLI::IsMember({"gaussian", "rademacher"}));
    }
  }

  SessionConfig load() const {
    SessionConfig c = path.empty() ? SessionConfig{} : load_config(path);
    if (seed) c.seed = *seed;
    if (snr_db) c.synth.snr_db = *snr_db;
    if (epochs) c.cnn.epochs = *epochs;
    if (multiplier) c.threshold_multiplier = *multiplier;
    if (carrier) c.synth.carrier = *carrier == "rademacher" ? Carrier::Rademacher : Carrier::Gaussian;
    c.validate();
    return c;
  }
};

inline std::vector<Recording> read_all(const std::vector<std::string>& paths, const SessionConfig& cfg) {
  std::vector<Recording> out;
  for (const auto& p : paths)
    if (!is_annotation_path(p)) out.push_back(read_recording(p, cfg.fs, cfg.channels));
  return out;
}

inline std::string slug(const GestureLabel& g) {
  std::string s = g.name.empty() ? "gesture_" + std::to_string(g.id) : g.name;
  for (char& c : s)
    if (!std::isalnum(static_cast<unsigned char>(c)) && c != '-' && c != '_') c = '_';
  return s;
}

inline std::string format_sigma_table(const ThresholdCalibration& cal, const SessionConfig& cfg) {
  std::ostringstream os;
  os << std::left << std::setw(20) << "gesture" << std::right << std::setw(16) << "sigma_d" << '\n';
  os << std::setprecision(9);
  for (const auto& [id, sigma] : cal.per_gesture_sigma) {
    const auto idx = cfg.gesture_index(id);
    const std::string name = idx < cfg.gesture_count() ? cfg.gestures[idx].name : std::to_string(id);
    os << std::left << std::setw(20) << name << std::right << std::setw(16) << sigma << '\n';
  }
  os << "threshold = " << cal.multiplier << " x mean sigma = " << cal.threshold << '\n';
  if (cal.degenerate) os << "warning: every sigma is zero; the threshold is degenerate\n";
  return os.str();
}

}  // namespace detail

/// Entry point of the `tmag` tool. Returns 0 on success, 2 on usage errors and
/// 1 on any other failure.
inline int cli_dispatch(int argc, const char* const* argv, std::istream& in = std::cin, std::ostream& out = std::cout,
                        std::ostream& err = std::cerr) {
  CLI::App app{"Gesture recognition from temporal muscle activation maps", "tmag"};
  app.require_subcommand(1);

  // synth
  auto* synth = app.add_subcommand("synth", "Generate labelled synthetic sessions");
  detail::ConfigFlags synth_cfg;
  synth_cfg.attach(*synth, true);
  std::string synth_dir, synth_out;
  std::vector<int> synth_sequence;
  auto* synth_dir_opt = synth->add_option("--out-dir", synth_dir, "Write the full protocol (calibration, training, evaluation)");
  auto* synth_out_opt = synth->add_option("--out", synth_out, "Write one session performing --sequence");
  synth->add_option("--sequence", synth_sequence, "Gesture ids for --out")->delimiter(',');
  synth_dir_opt->excludes(synth_out_opt);

  // calibrate
  auto* calibrate = app.add_subcommand("calibrate", "Compute the onset threshold from calibration recordings");
  detail::ConfigFlags cal_cfg;
  cal_cfg.attach(*calibrate, false);
  std::vector<std::string> cal_inputs;
  std::string cal_json;
  calibrate->add_option("inputs", cal_inputs, "Single-gesture calibration recordings")->required()->check(CLI::ExistingFile);
  calibrate->add_option("--json", cal_json, "Also write the calibration as JSON");

  // train
  auto* trainer = app.add_subcommand("train", "Extract windows, fit normalization, train the CNN and write a model");
  detail::ConfigFlags train_cfg;
  train_cfg.attach(*trainer, true);
  std::vector<std::string> train_cal, train_data;
  std::string train_out;
  trainer->add_option("--calibration", train_cal, "Calibration recordings")->required()->check(CLI::ExistingFile);
  trainer->add_option("--training", train_data, "Annotated training recordings")->required()->check(CLI::ExistingFile);
  trainer->add_option("--out", train_out, "Model file to write")->required();

  // run
  auto* runner = app.add_subcommand("run", "Stream a recording or stdin through the engine, JSON lines out");
  std::string run_model, run_config, run_input, run_output, run_diff;
  std::string run_pacing = "fast";
  bool run_no_suppress = false, run_no_timing = false;
  std::optional<double> run_threshold;
  runner->add_option("--model", run_model, "Trained model")->required()->check(CLI::ExistingFile);
  runner->add_option("--config", run_config, "JSON config (only 'suppression' is used)")->check(CLI::ExistingFile);
  runner->add_option("--input", run_input, "Recording CSV, or - for stdin")->required();
  runner->add_option("--pacing", run_pacing, "Replay speed")->check(CLI::IsMember({"fast", "realtime"}));
  runner->add_flag("--no-suppression", run_no_suppress, "Classify every onset");
  runner->add_flag("--no-timing", run_no_timing, "Write compute_us as null");
  runner->add_option("--threshold", run_threshold, "Override the calibrated threshold");
  runner->add_option("--output", run_output, "Write events here instead of stdout");
  runner->add_option("--differences", run_diff, "Write the d(n) series as CSV");

  // eval
  auto* evaluator = app.add_subcommand("eval", "Score a model on an annotated recording");
  std::string eval_model, eval_input, eval_report;
  bool eval_no_suppress = false, eval_json = false;
  std::optional<double> eval_threshold;
  evaluator->add_option("--model", eval_model, "Trained model")->required()->check(CLI::ExistingFile);
  evaluator->add_option("--input", eval_input, "Annotated recording")->required()->check(CLI::ExistingFile);
  evaluator->add_option("--report", eval_report, "Write the report JSON here");
  evaluator->add_flag("--json", eval_json, "Print the report JSON instead of the table");
  evaluator->add_flag("--no-suppression", eval_no_suppress, "Classify every onset");
  evaluator->add_option("--threshold", eval_threshold, "Override the calibrated threshold");

  // bench
  auto* bench = app.add_subcommand("bench", "Time the prediction path");
  detail::ConfigFlags bench_cfg;
  bench_cfg.attach(*bench, false);
  std::string bench_model;
  std::size_t bench_iterations = 1000;
  bench->add_option("--model", bench_model, "Trained model (default: untrained network from the config)")
      ->check(CLI::ExistingFile);
  bench->add_option("--iterations", bench_iterations, "Timed predictions")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    if (argc > 1) err << "error: " << e.what() << '\n';
    err << app.help();
    return 2;
  }

  try {
    if (synth->parsed()) {
      const SessionConfig cfg = synth_cfg.load();
      if (!synth_out.empty()) {
        if (synth_sequence.empty()) throw UsageError("--out needs --sequence");
        const auto templates = default_template_set(cfg);
        write_recording(synth_out, generate(sequential_script(synth_sequence, cfg, cfg.seed), templates, cfg));
        out << "wrote " << synth_out << '\n';
        return 0;
      }
      if (synth_dir.empty()) throw UsageError("synth needs --out-dir or --out");
      std::filesystem::create_directories(synth_dir);
      const auto p = synthesize_protocol(cfg);
      const std::filesystem::path dir(synth_dir);
      for (std::size_t i = 0; i < cfg.gesture_count(); ++i) {
        const auto name = detail::slug(cfg.gestures[i]);
        write_recording(dir / ("calibration_" + name + ".csv"), p.calibration[i]);
        write_recording(dir / ("training_" + name + ".csv"), p.training[i]);
      }
      write_recording(dir / "evaluation.csv", p.evaluation);
      std::ofstream(dir / "config.json") << config_to_json(cfg).dump(2) << '\n';
      out << "wrote " << 2 * cfg.gesture_count() + 1 << " recordings to " << synth_dir << '\n';
      return 0;
    }

    if (calibrate->parsed()) {
      const SessionConfig cfg = cal_cfg.load();
      const auto recs = detail::read_all(cal_inputs, cfg);
      const auto cal = calibrate_session(recs, cfg);
      out << detail::format_sigma_table(cal, cfg);
      if (!cal_json.empty()) {
        json sig = json::object();
        for (const auto& [id, s] : cal.per_gesture_sigma) sig[std::to_string(id)] = s;
        std::ofstream(cal_json) << json{{"sigma", sig},
                                        {"multiplier", cal.multiplier},
                                        {"threshold", cal.threshold},
                                        {"degenerate", cal.degenerate}}
                                       .dump(2)
                                << '\n';
      }
      return 0;
    }

    if (trainer->parsed()) {
      const SessionConfig cfg = train_cfg.load();
      const auto cal = detail::read_all(train_cal, cfg);
      const auto data = detail::read_all(train_data, cfg);
      const auto model = train_session(cal, data, cfg);
      write_model(train_out, model);
      out << detail::format_sigma_table(model.calibration, cfg);
      out << "trained " << model.network.arch.parameter_count() << " parameters, final loss "
          << model.network.meta.final_loss << "; wrote " << train_out << '\n';
      return 0;
    }

    if (runner->parsed()) {
      const SessionModel model = read_model(run_model);
      EngineOptions opts;
      if (!run_config.empty()) opts.suppression = load_config(run_config).suppression;
      if (run_no_suppress) opts.suppression = false;
      opts.threshold = run_threshold;
      std::ofstream file;
      if (!run_output.empty()) {
        file.open(run_output);
        if (!file) throw Error("cannot open " + run_output + " for writing");
      }
      std::ostream& sink = run_output.empty() ? out : file;
      Engine engine(model, opts);
      engine.record_differences(!run_diff.empty());
      const auto emit = [&](const EngineEvent& e) {
        write_event_line(sink, e, !run_no_timing);
        sink.flush();
      };
      if (run_input == "-") {
        run_stream(in, engine, emit);
      } else {
        const auto rec = read_recording(run_input, model.signal.fs, model.signal.channels);
        for (const auto& e : run_replay(rec, engine, run_pacing == "realtime" ? Pacing::Realtime : Pacing::Fast))
          emit(e);
      }
      if (!run_diff.empty()) {
        std::ofstream d(run_diff);
        write_difference_csv(d, engine.differences());
      }
      if (engine.overruns() > 0) err << "warning: " << engine.overruns() << " steps exceeded the k/fs budget\n";
      return 0;
    }

    if (evaluator->parsed()) {
      const SessionModel model = read_model(eval_model);
      const auto rec = read_recording(eval_input, model.signal.fs, model.signal.channels);
      if (rec.annotations.empty()) throw UsageError(eval_input + " has no annotations");
      EngineOptions opts;
      opts.suppression = !eval_no_suppress;
      opts.threshold = eval_threshold;
      const auto report = evaluate(model, rec, opts);
      const auto j = report_to_json(report);
      if (!eval_report.empty()) std::ofstream(eval_report) << j.dump(2) << '\n';
      if (eval_json)
        out << j.dump(2) << '\n';
      else
        out << format_report_table(report);
      return 0;
    }

    if (bench->parsed()) {
      const SessionConfig cfg = bench_cfg.load();
      const SessionModel model = bench_model.empty() ? initial_session_model(cfg) : read_model(bench_model);
      Classifier classifier(model.network);
      Rng rng(derive_seed(cfg.seed, "bench"));
      TmaMap map(0, model.signal.channels, model.signal.window);
      for (double& v : map.data) v = rng.uniform();
      for (int i = 0; i < 10; ++i) classifier.predict(map);
      std::vector<double> us;
      us.reserve(bench_iterations);
      for (std::size_t i = 0; i < bench_iterations; ++i) {
        map.data[i % map.data.size()] = rng.uniform();
        const auto t0 = std::chrono::steady_clock::now();
        classifier.predict(map);
        us.push_back(std::chrono::duration<double, std::micro>(std::chrono::steady_clock::now() - t0).count());
      }
      const auto s = latency_stats(us);
      const double budget_us = 1e6 * static_cast<double>(model.signal.hop) / model.signal.fs;
      out << std::fixed << std::setprecision(1) << "predictions " << s.count << "\nmean_us " << s.mean_us
          << "\np50_us " << s.p50_us << "\np95_us " << s.p95_us << "\nmax_us " << s.max_us << "\nbudget_us "
          << budget_us << '\n';
      return 0;
    }
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}

}  // namespace tmag
