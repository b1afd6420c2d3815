#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

namespace fineforge {

// Line-by-line JSONL reader. Blank lines are skipped; malformed lines throw
// with the line number.
class JsonlReader {
 public:
  explicit JsonlReader(const std::filesystem::path& path);

  std::optional<nlohmann::json> next();
  std::size_t line_number() const { return line_number_; }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
  std::ifstream in_;
  std::size_t line_number_ = 0;
};

std::vector<nlohmann::json> read_jsonl(const std::filesystem::path& path);

// Writes through a temporary file in the same directory and renames on
// commit, so readers never observe a half-written file. Destruction without
// commit removes the temporary.
class AtomicFileWriter {
 public:
  explicit AtomicFileWriter(const std::filesystem::path& path,
                            bool append_to_partial = false);
  ~AtomicFileWriter();

  AtomicFileWriter(const AtomicFileWriter&) = delete;
  AtomicFileWriter& operator=(const AtomicFileWriter&) = delete;

  void write_line(const nlohmann::json& value);
  void write_raw(std::string_view data);
  void flush();
  std::uint64_t bytes_written() const { return bytes_written_; }
  const std::filesystem::path& partial_path() const { return tmp_path_; }

  void commit();

 private:
  std::filesystem::path path_;
  std::filesystem::path tmp_path_;
  std::ofstream out_;
  std::uint64_t bytes_written_ = 0;
  bool committed_ = false;
};

// Content hash for change detection (FNV-1a over the bytes; not
// cryptographic). Throws when the file cannot be read.
std::uint64_t file_hash(const std::filesystem::path& path);
std::uint64_t json_content_hash(const nlohmann::json& value);

void write_text_file_atomic(const std::filesystem::path& path,
                            std::string_view content);

}  // namespace fineforge
