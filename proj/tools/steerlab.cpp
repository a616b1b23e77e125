// steerlab CLI — placeholder, replaced by the full command set.
int main() { return 0; }
