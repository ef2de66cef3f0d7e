use sparsecoder::bench::CountingAlloc;

#[global_allocator]
static ALLOC: CountingAlloc = CountingAlloc;

fn main() {
    std::process::exit(sparsecoder::cli::run(std::env::args_os()));
}
