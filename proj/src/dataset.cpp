#include "nimaenh/dataset.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "nimaenh/config.hpp"
#include "nimaenh/csv.hpp"
#include "nimaenh/error.hpp"
#include "nimaenh/image.hpp"

namespace nimaenh::dataset {

namespace {

namespace fs = std::filesystem;

const csv::Row kHeader{"path", "role", "operator", "sigma", "split", "pair", "param_a", "param_b"};

std::string image_name(const char* role, std::size_t index) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "images/%s_%05zu.ppm", role, index);
  return buf;
}

double parse_number(const std::string& text, const fs::path& manifest, std::size_t line) {
  double value = 0.0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc{} || ptr != text.data() + text.size()) {
    throw IoError(manifest.string() + " line " + std::to_string(line) + ": '" + text +
                  "' is not a number");
  }
  return value;
}

struct PendingPair {
  synth::DatasetPair pair;
  bool has_input = false, has_reference = false;
  bool train = false;
};

}  // namespace

std::size_t write_dataset(const fs::path& dir, const synth::Datasets& data) {
  std::error_code ec;
  fs::create_directories(dir / "images", ec);
  if (ec) throw IoError("cannot create dataset directory " + dir.string() + ": " + ec.message());

  csv::Table manifest(kHeader);
  auto rated = [&](const std::vector<synth::RatedImage>& set, const char* split) {
    for (const auto& r : set) {
      const auto name = image_name("rated", r.base_index);
      image::write_image(dir / name, r.image);
      manifest.add({name, "rated", "degrade", config::format_double(r.severity), split,
                    std::to_string(r.base_index), "", ""});
    }
  };
  auto pairs = [&](const std::vector<synth::DatasetPair>& set, const char* split) {
    for (const auto& p : set) {
      const auto a = config::format_double(p.param_a), b = config::format_double(p.param_b);
      const auto op = synth::to_string(p.op);
      const auto pair = std::to_string(p.base_index);
      const auto input = image_name("input", p.base_index);
      const auto reference = image_name("reference", p.base_index);
      image::write_image(dir / input, p.input);
      image::write_image(dir / reference, p.reference);
      manifest.add({input, "input", op, "", split, pair, a, b});
      manifest.add({reference, "reference", op, "", split, pair, a, b});
    }
  };
  rated(data.rated_train, "train");
  rated(data.rated_test, "test");
  pairs(data.pairs_train, "train");
  pairs(data.pairs_test, "test");

  std::ofstream out(dir / kManifestName, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + (dir / kManifestName).string());
  out << manifest.str();
  if (!out) throw IoError("failed writing " + (dir / kManifestName).string());
  return manifest.rows();
}

synth::Datasets read_dataset(const fs::path& dir) {
  const fs::path path = dir / kManifestName;
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read dataset manifest " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  const auto rows = csv::parse(buf.str());
  if (rows.empty() || rows.front() != kHeader) {
    throw IoError(path.string() + ": missing or unexpected header row");
  }

  synth::Datasets data;
  std::map<std::size_t, PendingPair> pending;
  for (std::size_t line = 1; line < rows.size(); ++line) {
    const auto& row = rows[line];
    if (row.size() != kHeader.size()) {
      throw IoError(path.string() + " line " + std::to_string(line + 1) + ": expected " +
                    std::to_string(kHeader.size()) + " fields");
    }
    const auto& role = row[1];
    const auto& split = row[4];
    if (split != "train" && split != "test") {
      throw IoError(path.string() + " line " + std::to_string(line + 1) + ": bad split '" + split + "'");
    }
    const bool train = split == "train";
    const auto index = static_cast<std::size_t>(parse_number(row[5], path, line + 1));
    Tensor img = image::read_image(dir / row[0]);
    if (role == "rated") {
      synth::RatedImage r;
      r.severity = parse_number(row[3], path, line + 1);
      r.rating = synth::synth_rating(r.severity);
      r.image = std::move(img);
      r.base_index = index;
      (train ? data.rated_train : data.rated_test).push_back(std::move(r));
    } else if (role == "input" || role == "reference") {
      auto& p = pending[index];
      p.train = train;
      p.pair.base_index = index;
      p.pair.op = row[2] == "haze" ? synth::Operator::haze : synth::Operator::tone;
      p.pair.param_a = parse_number(row[6], path, line + 1);
      p.pair.param_b = parse_number(row[7], path, line + 1);
      if (role == "input") {
        p.pair.input = std::move(img);
        p.has_input = true;
      } else {
        p.pair.reference = std::move(img);
        p.has_reference = true;
      }
    } else {
      throw IoError(path.string() + " line " + std::to_string(line + 1) + ": unknown role '" + role + "'");
    }
  }
  for (auto& [index, p] : pending) {
    if (!p.has_input || !p.has_reference) {
      throw IoError(path.string() + ": pair " + std::to_string(index) + " lacks its " +
                    (p.has_input ? "reference" : "input") + " image");
    }
    (p.train ? data.pairs_train : data.pairs_test).push_back(std::move(p.pair));
  }
  return data;
}

}  // namespace nimaenh::dataset
