use idblend::memory::CountingAllocator;

#[global_allocator]
static ALLOC: CountingAllocator = CountingAllocator;

fn main() {
    std::process::exit(idblend_cli::main_with(std::env::args_os()));
}
