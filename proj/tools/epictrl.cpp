#include <iostream>
int main() { std::cout << "epictrl placeholder\n"; return 0; }
