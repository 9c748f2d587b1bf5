#include "cfqa/sha256.hpp"

#include <openssl/evp.h>

#include <stdexcept>

#include "cfqa/text.hpp"

namespace cfqa {

std::string sha256_hex(std::string_view bytes) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
        throw std::runtime_error("SHA-256 digest failed");
    }
    return text::to_lower_hex(digest, len);
}

}  // namespace cfqa
