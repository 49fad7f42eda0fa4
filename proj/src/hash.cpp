#include "scan/hash.hpp"

#include <openssl/evp.h>

#include <fstream>
#include <stdexcept>

namespace scan {

namespace {

class Sha256 {
public:
    Sha256() : ctx_(EVP_MD_CTX_new()) {
        if (ctx_ == nullptr || EVP_DigestInit_ex(ctx_, EVP_sha256(), nullptr) != 1)
            throw std::runtime_error("sha256 init failed");
    }
    ~Sha256() { EVP_MD_CTX_free(ctx_); }
    void update(const void* data, size_t len) {
        if (EVP_DigestUpdate(ctx_, data, len) != 1)
            throw std::runtime_error("sha256 update failed");
    }
    std::string hex() {
        unsigned char digest[EVP_MAX_MD_SIZE];
        unsigned int len = 0;
        if (EVP_DigestFinal_ex(ctx_, digest, &len) != 1)
            throw std::runtime_error("sha256 final failed");
        static const char* kHex = "0123456789abcdef";
        std::string out(2 * len, '0');
        for (unsigned int i = 0; i < len; ++i) {
            out[2 * i] = kHex[digest[i] >> 4];
            out[2 * i + 1] = kHex[digest[i] & 0xf];
        }
        return out;
    }

private:
    EVP_MD_CTX* ctx_;
};

}  // namespace

std::string sha256_hex(const void* data, size_t len) {
    Sha256 h;
    h.update(data, len);
    return h.hex();
}

std::string sha256_hex(const std::string& s) { return sha256_hex(s.data(), s.size()); }

std::string file_sha256_hex(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open for hashing: " + path);
    Sha256 h;
    std::vector<char> buf(1 << 16);
    while (in) {
        in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
        h.update(buf.data(), static_cast<size_t>(in.gcount()));
    }
    return h.hex();
}

std::string params_sha256(const std::vector<nn::Param*>& params) {
    Sha256 h;
    for (const nn::Param* p : params) {
        h.update(p->name.data(), p->name.size());
        h.update(p->value.data(), static_cast<size_t>(p->value.numel()) * sizeof(double));
    }
    return h.hex();
}

}  // namespace scan
