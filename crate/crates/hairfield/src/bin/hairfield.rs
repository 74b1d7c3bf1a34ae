fn main() {
    println!("hairfield cli placeholder");
}
