#pragma once

#include <cstdint>
#include <string>

namespace fineforge {

// One unit of source text; the token count is what packing budgets against.
struct SourceDocument {
  std::string id;
  std::string text;
  std::uint64_t token_count = 0;
};

}  // namespace fineforge
