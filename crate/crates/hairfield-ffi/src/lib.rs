pub use hairfield::hello;
