#pragma once

namespace deepfactor {

/// Keeps large freed blocks in the heap instead of returning them to the OS.
/// Training allocates and frees multi-megabyte matrices every step; with the
/// default glibc thresholds each of them is a fresh mmap and page-fault storm.
/// Call once at program start; a no-op on other C libraries.
void tune_allocator();

}  // namespace deepfactor
