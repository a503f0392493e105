#pragma once

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "omreid/synthgen.hpp"

namespace omreid {

namespace fs = std::filesystem;

inline void write_manifest(const DatasetManifest& manifest, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw data_error("cannot open for write: " + path.string());
  for (const SampleRecord& r : manifest.records) {
    nlohmann::json j;
    j["id"] = r.id;
    j["modality"] = modality_name(r.modality);
    j["path"] = r.path;
    j["camera"] = r.camera;
    j["view"] = r.view;
    j["sha256"] = r.sha256;
    out << j.dump() << "\n";
  }
  if (!out) throw data_error("short write: " + path.string());
}

inline DatasetManifest read_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw data_error("cannot open manifest: " + path.string());
  DatasetManifest manifest;
  manifest.split = path.stem().string();
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw data_error(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
    SampleRecord r;
    r.id = j.at("id").get<int>();
    r.modality = parse_modality(j.at("modality").get<std::string>());
    r.path = j.at("path").get<std::string>();
    r.camera = j.at("camera").get<int>();
    r.view = j.at("view").get<int>();
    r.sha256 = j.at("sha256").get<std::string>();
    manifest.counts[r.modality]++;
    manifest.records.push_back(std::move(r));
  }
  if (manifest.records.empty()) throw data_error("manifest is empty: " + path.string());
  return manifest;
}

// Payload files under <dir>, full manifest plus identity-disjoint split
// manifests at the top level.
inline void write_dataset(const SynthDataset& ds, const fs::path& dir, double train_fraction) {
  fs::create_directories(dir);
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    const fs::path path = dir / ds.manifest.records[i].path;
    fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw data_error("cannot open for write: " + path.string());
    const std::string bytes = payload_bytes(ds.samples[i]);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw data_error("short write: " + path.string());
  }
  write_manifest(ds.manifest, dir / "manifest.jsonl");
  auto [train, test] = split(ds.manifest, train_fraction, ds.config.seed);
  write_manifest(train, dir / "train.jsonl");
  write_manifest(test, dir / "test.jsonl");
}

inline std::vector<std::size_t> parse_text_line(const std::string& line) {
  std::istringstream is(line);
  std::vector<std::size_t> ids;
  std::size_t v = 0;
  while (is >> v) ids.push_back(v);
  return ids;
}

// Loads payloads referenced by a manifest, verifying each sha256.
inline SynthDataset load_dataset(const fs::path& manifest_path) {
  SynthDataset ds;
  ds.manifest = read_manifest(manifest_path);
  const fs::path root = manifest_path.parent_path();
  for (const SampleRecord& r : ds.manifest.records) {
    const fs::path path = root / r.path;
    std::ifstream in(path, std::ios::binary);
    if (!in) throw data_error("missing payload: " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    const std::string bytes = buf.str();
    if (sha256_hex(bytes) != r.sha256)
      throw data_error("checksum mismatch for " + path.string() + "; dataset is corrupt or was regenerated");
    if (r.modality == ModalityId::T) {
      TextSample t;
      t.token_ids = parse_text_line(bytes);
      t.identity = r.id;
      t.camera = r.camera;
      t.view = r.view;
      ds.samples.push_back(std::move(t));
    } else {
      VisualSample v;
      v.pixels = read_pnm(path.string());
      v.modality = r.modality;
      v.identity = r.id;
      v.camera = r.camera;
      v.view = r.view;
      ds.samples.push_back(std::move(v));
    }
  }
  return ds;
}

}  // namespace omreid
