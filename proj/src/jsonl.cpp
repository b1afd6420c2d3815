#include "fineforge/jsonl.hpp"

#include "fineforge/rng.hpp"

namespace fineforge {

JsonlReader::JsonlReader(const std::filesystem::path& path)
    : path_(path), in_(path, std::ios::binary) {
  if (!in_) {
    throw std::runtime_error("cannot open " + path.string());
  }
}

std::optional<nlohmann::json> JsonlReader::next() {
  std::string line;
  while (std::getline(in_, line)) {
    ++line_number_;
    if (line.empty()) {
      continue;
    }
    try {
      return nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw std::runtime_error(path_.string() + ":" +
                               std::to_string(line_number_) +
                               ": bad JSON: " + e.what());
    }
  }
  return std::nullopt;
}

std::vector<nlohmann::json> read_jsonl(const std::filesystem::path& path) {
  JsonlReader reader(path);
  std::vector<nlohmann::json> rows;
  while (auto row = reader.next()) {
    rows.push_back(std::move(*row));
  }
  return rows;
}

AtomicFileWriter::AtomicFileWriter(const std::filesystem::path& path,
                                   bool append_to_partial)
    : path_(path), tmp_path_(path.string() + ".partial") {
  if (path_.has_parent_path()) {
    std::filesystem::create_directories(path_.parent_path());
  }
  const auto mode = append_to_partial
                        ? std::ios::binary | std::ios::app
                        : std::ios::binary | std::ios::trunc;
  if (append_to_partial && std::filesystem::exists(tmp_path_)) {
    bytes_written_ = std::filesystem::file_size(tmp_path_);
  }
  out_.open(tmp_path_, mode);
  if (!out_) {
    throw std::runtime_error("cannot open " + tmp_path_.string());
  }
}

AtomicFileWriter::~AtomicFileWriter() {
  if (!committed_) {
    out_.close();
    // Leave the partial file in place: resumable stages pick it back up.
  }
}

void AtomicFileWriter::write_line(const nlohmann::json& value) {
  const std::string line = value.dump();
  out_.write(line.data(), static_cast<std::streamsize>(line.size()));
  out_.put('\n');
  bytes_written_ += line.size() + 1;
  if (!out_) {
    throw std::runtime_error("write failed: " + tmp_path_.string());
  }
}

void AtomicFileWriter::write_raw(std::string_view data) {
  out_.write(data.data(), static_cast<std::streamsize>(data.size()));
  bytes_written_ += data.size();
  if (!out_) {
    throw std::runtime_error("write failed: " + tmp_path_.string());
  }
}

void AtomicFileWriter::flush() { out_.flush(); }

void AtomicFileWriter::commit() {
  out_.flush();
  out_.close();
  if (!out_) {
    throw std::runtime_error("flush failed: " + tmp_path_.string());
  }
  std::filesystem::rename(tmp_path_, path_);
  committed_ = true;
}

std::uint64_t file_hash(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw std::runtime_error("cannot hash missing file: " + path.string());
  }
  std::uint64_t state = 0xcbf29ce484222325ULL;
  char buffer[8192];
  while (in.read(buffer, sizeof(buffer)) || in.gcount() > 0) {
    const auto got = static_cast<std::size_t>(in.gcount());
    for (std::size_t i = 0; i < got; ++i) {
      state ^= static_cast<unsigned char>(buffer[i]);
      state *= 0x100000001b3ULL;
    }
  }
  return state;
}

std::uint64_t json_content_hash(const nlohmann::json& value) {
  const std::string dump = value.dump();
  return stable_hash64_bytes(dump.data(), dump.size());
}

void write_text_file_atomic(const std::filesystem::path& path,
                            std::string_view content) {
  AtomicFileWriter writer(path);
  writer.write_raw(content);
  writer.commit();
}

}  // namespace fineforge
