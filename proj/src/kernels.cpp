#include "gensel/kernels.hpp"

#include <cstdlib>
#include <cstring>

namespace gensel::kernels {

namespace {

const Ops* select() {
    if (const char* env = std::getenv("GENSEL_KERNELS")) {
        if (std::strcmp(env, "scalar") == 0) return &scalar_ops();
        if (std::strcmp(env, "avx2") == 0 && avx2_available()) return &avx2_ops();
    }
    return avx2_available() ? &avx2_ops() : &scalar_ops();
}

} // namespace

const Ops& ops() {
    static const Ops* selected = select();
    return *selected;
}

} // namespace gensel::kernels
