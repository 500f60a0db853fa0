#pragma once

#include <string>
#include <string_view>

namespace camf {

// Whole-file read. Paths ending in ".gz" are inflated transparently.
// Throws DataError when the file cannot be read.
std::string read_file(const std::string& path);

// Writes to a sibling temporary file and renames it over `path`, so readers
// never observe a partial file. ".gz" paths are compressed.
void write_file_atomic(const std::string& path, std::string_view content);

bool ends_with(std::string_view s, std::string_view suffix);

}  // namespace camf
