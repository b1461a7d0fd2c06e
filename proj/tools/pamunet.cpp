#include <iostream>

#ifdef __GLIBC__
#include <malloc.h>
#endif

#include "pamunet/cli.hpp"

int main(int argc, char** argv) {
#ifdef __GLIBC__
    // Keep large tensor buffers on the heap instead of fresh mmaps on every step.
    mallopt(M_MMAP_THRESHOLD, 256 << 20);
    mallopt(M_TRIM_THRESHOLD, 512 << 20);
#endif
    return pamunet::run_cli(argc, argv, std::cout, std::cerr);
}
