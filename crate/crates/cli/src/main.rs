fn main() {
    println!("momag");
}
