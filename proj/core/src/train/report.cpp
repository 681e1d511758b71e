#include "tempofuse/train/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "tempofuse/binary_format.hpp"
#include "tempofuse/error.hpp"

namespace tempofuse::train {

namespace fs = std::filesystem;

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

void write_text(const fs::path& path, const std::string& text) {
  write_file_atomic(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()),
                                    text.size()));
}

}  // namespace

void write_epochs_csv(std::span<const EpochReport> epochs, const fs::path& path) {
  std::ostringstream out;
  out << "epoch,train_loss,val_chunk_acc,val_song_acc,seconds\n";
  for (const auto& e : epochs) {
    out << e.epoch << ',' << fmt(e.train_loss) << ',' << fmt(e.val_chunk_acc) << ','
        << fmt(e.val_song_acc) << ',' << fmt(e.seconds) << '\n';
  }
  write_text(path, out.str());
}

void write_confusion_csv(const ConfusionMatrix& cm, const fs::path& path) {
  auto name = [&](std::size_t c) { return cm.classes.empty() ? std::to_string(c) : cm.classes[c]; };
  std::ostringstream out;
  out << "class";
  for (std::size_t c = 0; c < cm.n_classes; ++c) out << ',' << name(c);
  out << '\n';
  for (std::size_t r = 0; r < cm.n_classes; ++r) {
    out << name(r);
    for (std::size_t c = 0; c < cm.n_classes; ++c) out << ',' << cm.at(r, c);
    out << '\n';
  }
  write_text(path, out.str());
}

void write_per_class_csv(std::span<const ClassAccuracy> rows, const fs::path& path) {
  std::ostringstream out;
  out << "class,chunk_acc,song_acc\n";
  for (const auto& r : rows) out << r.name << ',' << fmt(r.chunk_acc) << ',' << fmt(r.song_acc) << '\n';
  write_text(path, out.str());
}

void write_tempo_csv(std::span<const TempoRow> rows, const fs::path& path) {
  std::ostringstream out;
  out << "song_id,class,bpm\n";
  for (const auto& r : rows) out << r.song_id << ',' << r.class_name << ',' << fmt(r.bpm) << '\n';
  write_text(path, out.str());
}

void write_pgm(const Matrix& m, const fs::path& path) {
  require(!m.empty(), ErrorCode::empty_input, "cannot render an empty matrix to " + path.string());
  const float* d = m.data().data();
  const auto [lo_it, hi_it] = std::minmax_element(d, d + m.size());
  const double lo = *lo_it, hi = *hi_it;
  const double span = hi > lo ? hi - lo : 1.0;
  const std::string header =
      "P5\n" + std::to_string(m.cols()) + " " + std::to_string(m.rows()) + "\n255\n";
  std::vector<std::uint8_t> bytes(header.begin(), header.end());
  bytes.reserve(bytes.size() + m.size());
  for (std::size_t i = 0; i < m.size(); ++i) {
    const double v = std::isfinite(d[i]) ? (d[i] - lo) / span : 0.0;
    bytes.push_back(static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)));
  }
  write_file_atomic(path, bytes);
}

Matrix confusion_image(const ConfusionMatrix& cm) {
  Matrix img(cm.n_classes, cm.n_classes);
  for (std::size_t r = 0; r < cm.n_classes; ++r) {
    for (std::size_t c = 0; c < cm.n_classes; ++c) img(r, c) = static_cast<float>(cm.at(r, c));
  }
  return img;
}

void export_report(const fs::path& dir, std::span<const EpochReport> epochs,
                   const Evaluation& evaluation) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  require(!ec && fs::is_directory(dir), ErrorCode::io,
          "cannot create report directory " + dir.string());
  if (!epochs.empty()) write_epochs_csv(epochs, dir / "epochs.csv");
  write_confusion_csv(evaluation.song_confusion, dir / "confusion.csv");
  write_per_class_csv(evaluation.per_class, dir / "per_class.csv");
  if (evaluation.song_confusion.n_classes > 0) {
    write_pgm(confusion_image(evaluation.song_confusion), dir / "confusion.pgm");
  }
}

}  // namespace tempofuse::train
