#include "cli.hpp"

#include <algorithm>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "commands.hpp"

namespace tempofuse::cli {

namespace {

std::string one_line(std::string s) {
  std::replace(s.begin(), s.end(), '\n', ' ');
  while (!s.empty() && s.back() == ' ') s.pop_back();
  return s;
}

int report(std::ostream& err, std::string_view code, const std::string& message, int status) {
  err << "error[" << code << "]: " << one_line(message) << "\n";
  return status;
}

void add_jobs(CLI::App* cmd, int& jobs) {
  cmd->add_option("--jobs,-j", jobs, "Worker threads")->check(CLI::PositiveNumber);
}

CLI::Option* add_cache(CLI::App* cmd, fs::path& cache) {
  return cmd
      ->add_option("--cache", cache,
                   std::string("Feature cache root (environment: ") + kCacheEnv + ")")
      ->envname(kCacheEnv);
}

void add_features(CLI::App* cmd, FeatureOptions& f) {
  cmd->add_option("--segment", f.segment,
                  "Clip segment in seconds, start:end or 'full'; applies to the tempograms and, "
                  "unless --mel-segment is given, to the Mel-spectrogram");
  cmd->add_option("--mel-segment", f.mel_segment, "Segment for the Mel-spectrogram");
  cmd->add_option("--n-fft", f.n_fft, "STFT window length in samples (Hamming)");
  cmd->add_option("--hop", f.hop, "STFT hop in samples");
  cmd->add_option("--n-mels", f.n_mels, "Mel bands");
  cmd->add_option("--tempo-window", f.tempo_window, "Tempogram window in novelty frames");
}

}  // namespace

int exit_code(ErrorCode code) {
  switch (code) {
    case ErrorCode::invalid_argument: return 2;
    case ErrorCode::io: return 3;
    case ErrorCode::format: return 4;
    case ErrorCode::checksum: return 5;
    case ErrorCode::shape: return 6;
    case ErrorCode::empty_input: return 7;
    case ErrorCode::numeric: return 8;
    case ErrorCode::state: return 9;
  }
  return 1;
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Music classification from Mel-spectrograms and tempograms", "tempofuse"};
  app.option_defaults()->always_capture_default();
  app.require_subcommand(1);
  app.set_config("--config", "",
                 "TOML/INI file of option defaults, one [section] per subcommand; "
                 "command-line flags take precedence");
  app.footer("Model inputs are 200-frame chunks. Exit status is 0 on success; failures print "
             "one line 'error[<code>]: <message>'.");

  SynthOptions synth;
  std::uint64_t synth_seed = 0;
  auto* c_synth = app.add_subcommand("synth", "Generate a synthetic click-track dataset");
  c_synth->add_option("--out,-o", synth.out, "Output directory")->required();
  c_synth->add_option("--spec", synth.spec, "JSON dataset spec (default: five classes)");
  c_synth->add_option("--songs-per-class", synth.songs_per_class, "Override the spec")
      ->check(CLI::PositiveNumber);
  c_synth->add_option("--duration", synth.duration, "Song length in seconds");
  auto* o_sseed = c_synth->add_option("--seed", synth_seed, "Random seed");
  add_jobs(c_synth, synth.jobs);

  ExtractOptions extract;
  auto* c_extract = app.add_subcommand("extract", "Compute and cache features of every song");
  c_extract->add_option("--manifest,-m", extract.manifest, "Manifest CSV or dataset directory")
      ->required();
  add_cache(c_extract, extract.cache);
  add_features(c_extract, extract.features);
  add_jobs(c_extract, extract.jobs);

  TempoOptions tempo;
  auto* c_tempo = app.add_subcommand("tempo", "Global tempo of every song to CSV");
  c_tempo->add_option("--manifest,-m", tempo.manifest, "Manifest CSV or dataset directory")
      ->required();
  c_tempo->add_option("--out,-o", tempo.out, "Output CSV (song_id,class,bpm)")->required();
  c_tempo->add_option("--segment", tempo.segment, "Segment start:end in seconds, or 'full'");
  add_jobs(c_tempo, tempo.jobs);

  TrainOptions tr;
  auto* c_train = app.add_subcommand("train", "Train a classifier");
  c_train->add_option("--manifest,-m", tr.manifest, "Manifest CSV or dataset directory")
      ->required();
  c_train->add_option("--split", tr.split, "Split CSV; drawn 8:1:1 from --seed when absent");
  c_train->add_option("--out,-o", tr.out, "Output directory")->required();
  add_cache(c_train, tr.cache);
  add_features(c_train, tr.features);
  c_train->add_option("--mode", tr.mode, "Model kind")
      ->check(CLI::IsMember({"mel_only", "ftg_only", "actg_only", "early", "late"}));
  c_train->add_option("--epochs", tr.epochs, "Maximum epochs")->check(CLI::PositiveNumber);
  c_train->add_option("--batch-size", tr.batch_size, "Chunks per minibatch")
      ->check(CLI::Range(2, 1 << 20));
  c_train->add_option("--lr", tr.lr, "Adam learning rate")->check(CLI::PositiveNumber);
  c_train->add_option("--dropout", tr.dropout, "Dropout before the output layer")
      ->check(CLI::Range(0.0, 0.99));
  c_train->add_option("--patience", tr.patience, "Early-stopping patience in epochs, 0 = off");
  c_train->add_option("--seed", tr.seed, "Random seed");
  add_jobs(c_train, tr.jobs);
  auto* o_blocks = c_train->add_option("--blocks", tr.blocks, "Residual blocks of the Mel backbone")
                       ->check(CLI::PositiveNumber);
  auto* o_channels =
      c_train->add_option("--channels", tr.channels, "Channels per residual block")
          ->check(CLI::PositiveNumber);
  auto* o_tchan = c_train->add_option("--tempo-channels", tr.tempo_channels,
                                      "Channels of the tempogram 1-D convolutions")
                      ->check(CLI::PositiveNumber);
  auto* o_echan = c_train->add_option("--embed-channels", tr.embed_channels,
                                      "Channels of the tempogram 2-D convolution")
                      ->check(CLI::PositiveNumber);
  auto* o_pool = c_train->add_option("--pool-len", tr.pool_len,
                                     "Length each 1-D convolution output is mean-pooled to")
                     ->check(CLI::PositiveNumber);
  c_train->add_option("--hidden", tr.hidden, "Hidden units of the classifier")
      ->check(CLI::PositiveNumber);

  EvalOptions ev;
  auto* c_eval = app.add_subcommand("eval", "Chunk and song accuracy with confusion reports");
  c_eval->add_option("--checkpoint,-c", ev.checkpoint, "Trained model")->required();
  c_eval->add_option("--manifest,-m", ev.manifest, "Manifest CSV or dataset directory")
      ->required();
  c_eval->add_option("--split", ev.split, "Split CSV written by train")->required();
  c_eval->add_option("--partition", ev.partition, "Partition to evaluate")
      ->check(CLI::IsMember({"train", "valid", "test"}));
  c_eval->add_option("--out,-o", ev.out, "Report directory")->required();
  add_cache(c_eval, ev.cache);
  c_eval->add_option("--batch-size", ev.batch_size, "Chunks per forward pass")
      ->check(CLI::PositiveNumber);
  add_jobs(c_eval, ev.jobs);

  PredictOptions pr;
  auto* c_predict = app.add_subcommand("predict", "Classify one WAV file, JSON to stdout");
  c_predict->add_option("--checkpoint,-c", pr.checkpoint, "Trained model")->required();
  c_predict->add_option("wav", pr.wav, "Audio file")->required();
  c_predict->add_option("--batch-size", pr.batch_size, "Chunks per forward pass")
      ->check(CLI::PositiveNumber);
  add_jobs(c_predict, pr.jobs);

  models::GradientSuiteOptions gc;
  auto* c_gc = app.add_subcommand("gradcheck", "Finite-difference gradient suite");
  c_gc->add_option("--seeds", gc.seeds, "Random seeds per case")->check(CLI::PositiveNumber);
  c_gc->add_option("--seed", gc.base_seed, "Base seed");
  c_gc->add_option("--blocks", gc.blocks, "Backbone blocks of the model cases")
      ->check(CLI::PositiveNumber);
  c_gc->add_option("--channels", gc.channels, "Channels of the model cases")
      ->check(CLI::PositiveNumber);
  c_gc->add_option("--tolerance", gc.tolerance, "Maximum relative error");
  c_gc->add_option("--coords", gc.coords_per_tensor, "Probed coordinates per tensor")
      ->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e, out, err);
    return report(err, "usage", e.what(), 2);
  }

  try {
    if (*c_synth) {
      if (o_sseed->count() > 0) synth.seed = synth_seed;
      cmd_synth(synth, out);
    } else if (*c_extract) {
      cmd_extract(extract, out);
    } else if (*c_tempo) {
      cmd_tempo(tempo, out);
    } else if (*c_train) {
      if (tr.mode == "mel_only") {
        for (auto* o : {o_tchan, o_echan, o_pool}) {
          require(o->count() == 0, ErrorCode::invalid_argument,
                  "--mode mel_only takes no tempogram option, got " + o->get_name());
        }
      }
      if (tr.mode == "ftg_only" || tr.mode == "actg_only") {
        for (auto* o : {o_blocks, o_channels}) {
          require(o->count() == 0, ErrorCode::invalid_argument,
                  "--mode " + tr.mode + " takes no Mel backbone option, got " + o->get_name());
        }
      }
      cmd_train(tr, out);
    } else if (*c_eval) {
      cmd_eval(ev, out);
    } else if (*c_predict) {
      cmd_predict(pr, out);
    } else if (*c_gc) {
      cmd_gradcheck(gc, out);
    }
  } catch (const Error& e) {
    return report(err, to_string(e.code()), e.what(), exit_code(e.code()));
  } catch (const std::filesystem::filesystem_error& e) {
    return report(err, to_string(ErrorCode::io), e.what(), exit_code(ErrorCode::io));
  } catch (const nlohmann::json::exception& e) {
    return report(err, to_string(ErrorCode::format), e.what(), exit_code(ErrorCode::format));
  } catch (const std::invalid_argument& e) {
    return report(err, to_string(ErrorCode::invalid_argument), e.what(), 2);
  } catch (const std::exception& e) {
    return report(err, "internal", e.what(), 1);
  }
  return 0;
}

}  // namespace tempofuse::cli
