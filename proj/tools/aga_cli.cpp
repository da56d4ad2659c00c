// Placeholder until the C API lands.
int main() { return 0; }
