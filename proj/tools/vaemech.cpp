#include <malloc.h>

#include "vaemech/harness/cli.hpp"

int main(int argc, char** argv) {
    // Keep large activation buffers in the heap between training steps
    // instead of returning them to the OS after every free.
    mallopt(M_MMAP_THRESHOLD, 1 << 30);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
    return vaemech::run_cli(argc, argv);
}
