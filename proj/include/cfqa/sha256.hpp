#pragma once

#include <string>
#include <string_view>

namespace cfqa {

/// SHA-256 of the exact input bytes as 64 lowercase hex characters.
std::string sha256_hex(std::string_view bytes);

}  // namespace cfqa
