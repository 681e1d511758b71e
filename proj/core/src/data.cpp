#include "tempofuse/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <set>
#include <sstream>
#include <span>

#include "tempofuse/binary_format.hpp"
#include "tempofuse/error.hpp"
#include "tempofuse/parallel.hpp"
#include "tempofuse/rng.hpp"

namespace tempofuse::data {

namespace fs = std::filesystem;

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::stringstream ss(line);
  std::string field;
  while (std::getline(ss, field, ',')) fields.push_back(field);
  if (!line.empty() && line.back() == ',') fields.emplace_back();
  return fields;
}

std::string strip_cr(std::string s) {
  if (!s.empty() && s.back() == '\r') s.pop_back();
  return s;
}

void check_csv_field(const std::string& value, const char* what) {
  require(value.find_first_of(",\n\r") == std::string::npos, ErrorCode::invalid_argument,
          std::string(what) + " contains a comma or newline: " + value);
}

std::vector<std::string> sorted_classes(const std::vector<ManifestEntry>& entries) {
  std::set<std::string> names;
  for (const auto& e : entries) names.insert(e.class_name);
  return {names.begin(), names.end()};
}

std::string_view timbre_name(Timbre t) {
  switch (t) {
    case Timbre::click: return "click";
    case Timbre::noise_burst: return "noise-burst";
    case Timbre::tone_burst: return "tone-burst";
  }
  return "click";
}

Timbre timbre_from_name(std::string_view s) {
  if (s == "click") return Timbre::click;
  if (s == "noise-burst") return Timbre::noise_burst;
  if (s == "tone-burst") return Timbre::tone_burst;
  fail(ErrorCode::invalid_argument, "unknown timbre \"" + std::string(s) + "\"");
}

}  // namespace

std::size_t DatasetManifest::class_index(std::string_view name) const {
  const auto it = std::lower_bound(classes.begin(), classes.end(), name);
  if (it == classes.end() || *it != name) {
    fail(ErrorCode::invalid_argument, "unknown class \"" + std::string(name) + "\"");
  }
  return static_cast<std::size_t>(it - classes.begin());
}

const ManifestEntry& DatasetManifest::entry(std::string_view song_id) const {
  for (const auto& e : entries) {
    if (e.song_id == song_id) return e;
  }
  fail(ErrorCode::invalid_argument, "song \"" + std::string(song_id) + "\" not in manifest");
}

void DatasetManifest::validate() const {
  std::set<std::string> ids;
  std::map<std::string, std::size_t> per_class;
  for (const auto& e : entries) {
    require(ids.insert(e.song_id).second, ErrorCode::invalid_argument,
            "duplicate song_id \"" + e.song_id + "\"");
    ++per_class[e.class_name];
  }
  require(std::is_sorted(classes.begin(), classes.end()), ErrorCode::invalid_argument,
          "class table is not sorted");
  for (const auto& c : classes) {
    require(per_class.count(c) > 0, ErrorCode::empty_input,
            "class \"" + c + "\" has no entries");
  }
  for (const auto& [c, n] : per_class) class_index(c);
}

DatasetManifest build_manifest(const fs::path& root, std::optional<double> min_duration_s) {
  require(fs::is_directory(root), ErrorCode::io, "not a directory: " + root.string());
  DatasetManifest m;
  m.root = root;
  std::vector<fs::path> class_dirs;
  for (const auto& d : fs::directory_iterator(root)) {
    if (d.is_directory()) class_dirs.push_back(d.path());
  }
  std::sort(class_dirs.begin(), class_dirs.end());
  for (const auto& dir : class_dirs) {
    const std::string cls = dir.filename().string();
    check_csv_field(cls, "class name");
    std::vector<fs::path> files;
    for (const auto& f : fs::directory_iterator(dir)) {
      if (f.is_regular_file() && f.path().extension() == ".wav") files.push_back(f.path());
    }
    require(!files.empty(), ErrorCode::empty_input,
            "class directory \"" + cls + "\" contains no .wav files");
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      if (min_duration_s) {
        const double d = wav_duration(f);
        require(d + 0.5 / kCanonicalRate >= *min_duration_s, ErrorCode::invalid_argument,
                f.string() + ": " + std::to_string(d) + " s is shorter than the " +
                    std::to_string(*min_duration_s) + " s analysis window");
      }
      ManifestEntry e{f.stem().string(), fs::relative(f, root), cls};
      check_csv_field(e.song_id, "song_id");
      m.entries.push_back(std::move(e));
    }
  }
  m.classes = sorted_classes(m.entries);
  m.validate();
  return m;
}

void write_manifest_csv(const DatasetManifest& manifest, const fs::path& csv) {
  std::ostringstream out;
  out << "song_id,relative_path,class_name\n";
  const fs::path base = csv.has_parent_path() ? csv.parent_path() : fs::path(".");
  for (const auto& e : manifest.entries) {
    const fs::path rel = fs::relative(manifest.root / e.relative_path, base).lexically_normal();
    check_csv_field(rel.generic_string(), "relative_path");
    out << e.song_id << ',' << rel.generic_string() << ',' << e.class_name << '\n';
  }
  const std::string s = out.str();
  write_file_atomic(csv, std::span(reinterpret_cast<const std::uint8_t*>(s.data()), s.size()));
}

DatasetManifest read_manifest_csv(const fs::path& csv) {
  std::ifstream in(csv);
  require(static_cast<bool>(in), ErrorCode::io, "cannot open manifest " + csv.string());
  std::string line;
  require(static_cast<bool>(std::getline(in, line)) &&
              strip_cr(line) == "song_id,relative_path,class_name",
          ErrorCode::format, csv.string() + ": missing header song_id,relative_path,class_name");
  DatasetManifest m;
  m.root = csv.has_parent_path() ? csv.parent_path() : fs::path(".");
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    line = strip_cr(line);
    if (line.empty()) continue;
    const auto f = split_csv_line(line);
    require(f.size() == 3, ErrorCode::format,
            csv.string() + ":" + std::to_string(line_no) + ": expected 3 fields");
    m.entries.push_back({f[0], fs::path(f[1]), f[2]});
  }
  m.classes = sorted_classes(m.entries);
  m.validate();
  return m;
}

std::string_view to_string(Partition p) {
  switch (p) {
    case Partition::train: return "train";
    case Partition::valid: return "valid";
    case Partition::test: return "test";
  }
  return "train";
}

Partition partition_from_string(std::string_view s) {
  if (s == "train") return Partition::train;
  if (s == "valid") return Partition::valid;
  if (s == "test") return Partition::test;
  fail(ErrorCode::invalid_argument, "unknown partition \"" + std::string(s) + "\"");
}

std::vector<std::string> SplitSpec::songs_in(Partition p, const DatasetManifest& manifest) const {
  std::vector<std::string> out;
  for (const auto& e : manifest.entries) {
    const auto it = assignment.find(e.song_id);
    if (it != assignment.end() && it->second == p) out.push_back(e.song_id);
  }
  return out;
}

std::array<std::size_t, 3> split_counts(std::size_t n, SplitRatios ratios) {
  const std::array<unsigned, 3> r{ratios.train, ratios.valid, ratios.test};
  const unsigned total = r[0] + r[1] + r[2];
  require(total > 0, ErrorCode::invalid_argument, "split ratios sum to zero");
  std::array<std::size_t, 3> counts{};
  std::array<std::size_t, 3> remainder{};  // numerator of the fractional part
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < 3; ++i) {
    counts[i] = n * r[i] / total;
    remainder[i] = n * r[i] % total;
    assigned += counts[i];
  }
  // Largest remainder; ties go to the earlier partition.
  while (assigned < n) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < 3; ++i) {
      if (remainder[i] > remainder[best]) best = i;
    }
    ++counts[best];
    remainder[best] = 0;
    ++assigned;
  }
  // Every partition with a nonzero ratio gets at least one song.
  for (std::size_t i = 0; i < 3; ++i) {
    if (r[i] > 0 && counts[i] == 0) {
      const auto donor = static_cast<std::size_t>(
          std::max_element(counts.begin(), counts.end()) - counts.begin());
      --counts[donor];
      ++counts[i];
    }
  }
  return counts;
}

SplitSpec split_dataset(const DatasetManifest& manifest, SplitRatios ratios, std::uint64_t seed) {
  const std::size_t parts = (ratios.train > 0) + (ratios.valid > 0) + (ratios.test > 0);
  SplitSpec split{ratios, seed, {}};
  for (std::size_t c = 0; c < manifest.classes.size(); ++c) {
    std::vector<std::string> songs;
    for (const auto& e : manifest.entries) {
      if (e.class_name == manifest.classes[c]) songs.push_back(e.song_id);
    }
    require(songs.size() >= parts, ErrorCode::invalid_argument,
            "class \"" + manifest.classes[c] + "\" has " + std::to_string(songs.size()) +
                " songs; a split needs at least " + std::to_string(parts));
    std::sort(songs.begin(), songs.end());
    Rng rng(mix_seed(seed, c));
    rng.shuffle(songs);
    const auto counts = split_counts(songs.size(), ratios);
    std::size_t pos = 0;
    const std::array<Partition, 3> order{Partition::train, Partition::valid, Partition::test};
    for (std::size_t p = 0; p < 3; ++p) {
      for (std::size_t i = 0; i < counts[p]; ++i) split.assignment[songs[pos++]] = order[p];
    }
  }
  return split;
}

void write_split_csv(const SplitSpec& split, const fs::path& csv) {
  std::ostringstream out;
  out << "song_id,partition\n";
  for (const auto& [id, p] : split.assignment) out << id << ',' << to_string(p) << '\n';
  const std::string s = out.str();
  write_file_atomic(csv, std::span(reinterpret_cast<const std::uint8_t*>(s.data()), s.size()));
}

SplitSpec read_split_csv(const fs::path& csv) {
  std::ifstream in(csv);
  require(static_cast<bool>(in), ErrorCode::io, "cannot open split " + csv.string());
  std::string line;
  require(static_cast<bool>(std::getline(in, line)) && strip_cr(line) == "song_id,partition",
          ErrorCode::format, csv.string() + ": missing header song_id,partition");
  SplitSpec split;
  while (std::getline(in, line)) {
    line = strip_cr(line);
    if (line.empty()) continue;
    const auto f = split_csv_line(line);
    require(f.size() == 2, ErrorCode::format, csv.string() + ": expected 2 fields per row");
    split.assignment[f[0]] = partition_from_string(f[1]);
  }
  return split;
}

void SyntheticSpec::validate() const {
  require(!classes.empty(), ErrorCode::invalid_argument, "synthetic spec has no classes");
  require(songs_per_class >= 1, ErrorCode::invalid_argument, "songs_per_class must be >= 1");
  require(duration_s > 0.0, ErrorCode::invalid_argument, "duration_s must be positive");
  require(sample_rate > 0, ErrorCode::invalid_argument, "sample_rate must be positive");
  std::set<std::string> names;
  for (const auto& c : classes) {
    require(c.bpm > 0.0, ErrorCode::invalid_argument, "class \"" + c.name + "\": bpm must be > 0");
    require(c.jitter >= 0.0 && c.jitter <= 0.2, ErrorCode::invalid_argument,
            "class \"" + c.name + "\": jitter must be in [0, 0.2]");
    require(!c.name.empty() && names.insert(c.name).second, ErrorCode::invalid_argument,
            "class names must be non-empty and unique");
    check_csv_field(c.name, "class name");
  }
}

SyntheticSpec SyntheticSpec::default_suite() {
  SyntheticSpec s;
  s.classes = {
      {"bpm090", 90.0, Timbre::click, 0.1},      {"bpm110", 110.0, Timbre::noise_burst, 0.1},
      {"bpm128", 128.0, Timbre::tone_burst, 0.1}, {"bpm140", 140.0, Timbre::click, 0.1},
      {"bpm170", 170.0, Timbre::noise_burst, 0.1},
  };
  return s;
}

void to_json(nlohmann::json& j, const SyntheticSpec& spec) {
  j = nlohmann::json::object();
  j["songs_per_class"] = spec.songs_per_class;
  j["duration_s"] = spec.duration_s;
  j["sample_rate"] = spec.sample_rate;
  j["seed"] = spec.seed;
  auto& cls = j["classes"] = nlohmann::json::array();
  for (const auto& c : spec.classes) {
    cls.push_back({{"name", c.name},
                   {"bpm", c.bpm},
                   {"timbre", std::string(timbre_name(c.timbre))},
                   {"jitter", c.jitter}});
  }
}

void from_json(const nlohmann::json& j, SyntheticSpec& spec) {
  spec = SyntheticSpec{};
  spec.songs_per_class = j.value("songs_per_class", spec.songs_per_class);
  spec.duration_s = j.value("duration_s", spec.duration_s);
  spec.sample_rate = j.value("sample_rate", spec.sample_rate);
  spec.seed = j.value("seed", spec.seed);
  for (const auto& c : j.at("classes")) {
    spec.classes.push_back({c.at("name").get<std::string>(), c.at("bpm").get<double>(),
                            timbre_from_name(c.value("timbre", std::string("click"))),
                            c.value("jitter", 0.0)});
  }
}

std::vector<double> synth_event_times(const SyntheticClass& cls, double duration_s,
                                      std::uint64_t seed) {
  Rng rng(mix_seed(seed, 0));
  const double period = 60.0 / cls.bpm;
  const double phase = rng.uniform(0.0, period);
  std::vector<double> times;
  for (std::size_t j = 0;; ++j) {
    const double nominal = phase + static_cast<double>(j) * period;
    if (nominal >= duration_s) break;
    const double t = nominal + rng.uniform(-cls.jitter, cls.jitter) * period;
    if (t >= 0.0 && t < duration_s) times.push_back(t);
  }
  return times;
}

AudioClip synth_click_track(const SyntheticClass& cls, double duration_s, int sample_rate,
                            std::uint64_t seed) {
  require(sample_rate > 0 && duration_s > 0.0, ErrorCode::invalid_argument,
          "synth: duration and sample rate must be positive");
  const auto n = static_cast<std::size_t>(std::llround(duration_s * sample_rate));
  const double fs = sample_rate;
  AudioClip clip{std::vector<float>(n, 0.0f), sample_rate};
  std::vector<double> mix(n, 0.0);

  Rng rng(mix_seed(seed, 1));
  const double level = rng.uniform(0.4, 0.8);
  const double tone_hz = rng.uniform(300.0, 900.0);
  const double floor_level = 0.005;

  // Event envelope length and decay per timbre.
  double decay_s = 0.004;
  double length_s = 0.03;
  if (cls.timbre == Timbre::noise_burst) {
    decay_s = 0.04;
    length_s = 0.2;
  } else if (cls.timbre == Timbre::tone_burst) {
    decay_s = 0.06;
    length_s = 0.3;
  }
  const auto event_len = static_cast<std::size_t>(length_s * fs);

  for (double t0 : synth_event_times(cls, duration_s, seed)) {
    const auto start = static_cast<std::size_t>(t0 * fs);
    const double amp = level * rng.uniform(0.85, 1.0);
    for (std::size_t i = 0; i < event_len && start + i < n; ++i) {
      const double t = static_cast<double>(i) / fs;
      const double env = std::exp(-t / decay_s);
      double v = 0.0;
      switch (cls.timbre) {
        case Timbre::click:
        case Timbre::noise_burst:
          v = rng.uniform(-1.0, 1.0);
          break;
        case Timbre::tone_burst:
          v = std::sin(2.0 * std::numbers::pi * tone_hz * t) * std::min(1.0, t / 0.002);
          break;
      }
      mix[start + i] += amp * env * v;
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    const double v = mix[i] + floor_level * rng.uniform(-1.0, 1.0);
    clip.samples[i] = static_cast<float>(std::clamp(v, -1.0, 1.0));
  }
  return clip;
}

DatasetManifest synth_click_dataset(const SyntheticSpec& spec, const fs::path& out_dir, int jobs) {
  spec.validate();
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  require(!ec && fs::is_directory(out_dir), ErrorCode::io,
          "cannot create output directory " + out_dir.string());

  DatasetManifest m;
  m.root = out_dir;
  struct Job {
    std::size_t class_idx;
    int song;
  };
  std::vector<Job> work;
  for (std::size_t c = 0; c < spec.classes.size(); ++c) {
    for (int i = 0; i < spec.songs_per_class; ++i) work.push_back({c, i});
  }
  auto song_id = [&](const Job& j) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "_%03d", j.song);
    return spec.classes[j.class_idx].name + buf;
  };
  parallel_for(work.size(), jobs, [&](std::size_t k) {
    const auto& j = work[k];
    const auto& cls = spec.classes[j.class_idx];
    const auto seed = mix_seed(spec.seed, j.class_idx * 1000003ULL + static_cast<unsigned>(j.song));
    const auto clip = synth_click_track(cls, spec.duration_s, spec.sample_rate, seed);
    write_wav16(out_dir / cls.name / (song_id(j) + ".wav"), clip);
  });
  for (const auto& j : work) {
    const auto id = song_id(j);
    const auto& cls = spec.classes[j.class_idx];
    m.entries.push_back({id, fs::path(cls.name) / (id + ".wav"), cls.name});
  }
  std::sort(m.entries.begin(), m.entries.end(),
            [](const auto& a, const auto& b) { return a.relative_path < b.relative_path; });
  m.classes = sorted_classes(m.entries);
  m.validate();
  write_manifest_csv(m, out_dir / "manifest.csv");
  return m;
}

}  // namespace tempofuse::data
