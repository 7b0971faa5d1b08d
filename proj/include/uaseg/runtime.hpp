#pragma once

namespace uaseg {

// Keeps large tape buffers on the heap instead of returning them to the OS
// after every step. No-op outside glibc.
void tune_allocator();

}  // namespace uaseg
