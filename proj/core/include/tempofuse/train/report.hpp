#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "tempofuse/matrix.hpp"
#include "tempofuse/train/evaluate.hpp"
#include "tempofuse/train/trainer.hpp"

namespace tempofuse::train {

struct TempoRow {
  std::string song_id;
  std::string class_name;
  double bpm = 0.0;
};

/// epoch,train_loss,val_chunk_acc,val_song_acc,seconds
void write_epochs_csv(std::span<const EpochReport> epochs, const std::filesystem::path& path);
/// Header "class,<names...>"; one row per true class.
void write_confusion_csv(const ConfusionMatrix& cm, const std::filesystem::path& path);
/// class,chunk_acc,song_acc
void write_per_class_csv(std::span<const ClassAccuracy> rows, const std::filesystem::path& path);
/// song_id,class,bpm
void write_tempo_csv(std::span<const TempoRow> rows, const std::filesystem::path& path);

/// Binary 8-bit PGM, one pixel per cell, min-max scaled (a constant matrix
/// renders black). Row 0 is the top row of the image.
void write_pgm(const Matrix& m, const std::filesystem::path& path);
Matrix confusion_image(const ConfusionMatrix& cm);

/// Writes confusion.csv, per_class.csv and confusion.pgm into `dir`, plus
/// epochs.csv when `epochs` is non-empty.
void export_report(const std::filesystem::path& dir, std::span<const EpochReport> epochs,
                   const Evaluation& evaluation);

}  // namespace tempofuse::train
