#include "cetrec/io.hpp"

#include <openssl/evp.h>

#include <chrono>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "cetrec/errors.hpp"

namespace cetrec {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

json optional_int(const std::optional<int>& v) { return v ? json(*v) : json(nullptr); }

std::optional<int> read_optional_int(const json& j, const char* key) {
  const auto it = j.find(key);
  if (it == j.end() || it->is_null()) {
    return std::nullopt;
  }
  return it->get<int>();
}

template <typename F>
auto parse_guard(const fs::path& path, F&& f) {
  try {
    return f();
  } catch (const json::exception& e) {
    throw IoError(path.string() + ": malformed content: " + e.what());
  }
}

}  // namespace

json catalog_to_json(const Catalog& catalog) {
  json arr = json::array();
  for (const Item& item : catalog.items()) {
    arr.push_back({{"item_id", item.item_id},
                   {"title", item.title},
                   {"genre", item.genre},
                   {"franchise", optional_int(item.franchise)},
                   {"part", optional_int(item.part)}});
  }
  return arr;
}

Catalog catalog_from_json(const json& j) {
  if (!j.is_array()) {
    throw IoError("catalog: expected a JSON array");
  }
  std::vector<Item> items;
  for (const json& e : j) {
    Item item;
    item.item_id = e.at("item_id").get<int>();
    item.title = e.at("title").get<std::string>();
    item.genre = e.at("genre").get<int>();
    item.franchise = read_optional_int(e, "franchise");
    item.part = read_optional_int(e, "part");
    items.push_back(std::move(item));
  }
  return Catalog(std::move(items));
}

json example_to_json(const Example& ex) {
  return {{"user_id", ex.user_id},
          {"window", ex.window},
          {"target", ex.target},
          {"draw_time", ex.draw_time},
          {"start", ex.start}};
}

Example example_from_json(const json& j) {
  Example ex;
  ex.user_id = j.at("user_id").get<int>();
  ex.window = j.at("window").get<std::vector<int>>();
  ex.target = j.at("target").get<int>();
  ex.draw_time = j.at("draw_time").get<int>();
  ex.start = j.at("start").get<int>();
  return ex;
}

void write_text(const fs::path& path, std::string_view text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw IoError("cannot write " + path.string());
  }
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) {
    throw IoError("write failed for " + path.string());
  }
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw IoError("cannot read " + path.string());
  }
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

json read_json(const fs::path& path) {
  const std::string text = read_text(path);
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw IoError(path.string() + ": invalid JSON: " + e.what());
  }
}

void write_catalog(const fs::path& path, const Catalog& catalog) { write_json(path, catalog_to_json(catalog)); }

Catalog read_catalog(const fs::path& path) {
  const json j = read_json(path);
  return parse_guard(path, [&] { return catalog_from_json(j); });
}

void write_sequences(const fs::path& path, std::span<const InteractionSequence> sequences) {
  std::string text;
  for (const auto& s : sequences) {
    text += json{{"user_id", s.user_id}, {"items", s.items}, {"draw_time", s.draw_time}, {"truncated", s.truncated}}
                .dump();
    text += '\n';
  }
  write_text(path, text);
}

std::vector<InteractionSequence> read_sequences(const fs::path& path) {
  std::istringstream in(read_text(path));
  std::vector<InteractionSequence> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) {
      continue;
    }
    try {
      const json j = json::parse(line);
      InteractionSequence s;
      s.user_id = j.at("user_id").get<int>();
      s.items = j.at("items").get<std::vector<int>>();
      s.draw_time = j.at("draw_time").get<int>();
      s.truncated = j.value("truncated", false);
      out.push_back(std::move(s));
    } catch (const json::exception& e) {
      throw IoError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

void write_split(const fs::path& path, const DatasetSplit& split) {
  auto list = [](const std::vector<Example>& v) {
    json arr = json::array();
    for (const auto& ex : v) {
      arr.push_back(example_to_json(ex));
    }
    return arr;
  };
  write_json(path, {{"ratio", split.ratio},
                    {"sizes", {split.train.size(), split.validation.size(), split.test.size()}},
                    {"train", list(split.train)},
                    {"validation", list(split.validation)},
                    {"test", list(split.test)}});
}

DatasetSplit read_split(const fs::path& path) {
  const json j = read_json(path);
  return parse_guard(path, [&] {
    DatasetSplit s;
    const auto r = j.at("ratio").get<std::vector<int>>();
    if (r.size() != 3) {
      throw IoError(path.string() + ": ratio must have three entries");
    }
    s.ratio = {r[0], r[1], r[2]};
    for (const auto& e : j.at("train")) {
      s.train.push_back(example_from_json(e));
    }
    for (const auto& e : j.at("validation")) {
      s.validation.push_back(example_from_json(e));
    }
    for (const auto& e : j.at("test")) {
      s.test.push_back(example_from_json(e));
    }
    return s;
  });
}

void write_dataset(const fs::path& dir, const Dataset& dataset) {
  fs::create_directories(dir);
  write_catalog(dir / files::kCatalog, dataset.catalog);
  write_sequences(dir / files::kSequences, dataset.sequences);
  write_split(dir / files::kSplits, dataset.split);
}

Dataset read_dataset(const fs::path& dir) {
  for (const char* name : {files::kCatalog, files::kSequences, files::kSplits}) {
    if (!fs::exists(dir / name)) {
      throw IoError("data directory " + dir.string() + " is missing " + name);
    }
  }
  Dataset ds;
  ds.catalog = read_catalog(dir / files::kCatalog);
  ds.sequences = read_sequences(dir / files::kSequences);
  ds.split = read_split(dir / files::kSplits);
  return ds;
}

std::string sha256_hex(std::string_view bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw IoError("SHA-256 computation failed");
  }
  std::ostringstream ss;
  for (unsigned int i = 0; i < len; ++i) {
    ss << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(digest[i]);
  }
  return ss.str();
}

std::string sha256_file(const fs::path& path) { return sha256_hex(read_text(path)); }

void write_manifest(const fs::path& dir, const Manifest& m) {
  json inputs = json::object();
  for (const auto& p : m.inputs) {
    inputs[p.string()] = sha256_file(p);
  }
  json outputs = json::object();
  for (const auto& p : m.outputs) {
    outputs[p.filename().string()] = sha256_file(p);
  }
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::ostringstream ts;
  ts << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  write_json(dir / files::kManifest, {{"tool", "cetrec"},
                                      {"version", kToolVersion},
                                      {"command", m.command},
                                      {"config", m.config},
                                      {"seeds", m.seeds},
                                      {"inputs", inputs},
                                      {"outputs", outputs},
                                      {"created_at", ts.str()}});
}

}  // namespace cetrec
